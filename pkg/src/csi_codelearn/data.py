"""Spectral cubes, label maps, train/test splits and the synthetic benchmark scene.

Pixel ordering is row-major everywhere: pixel ``j`` is ``(j // N, j % N)``.
Background pixels carry label ``-1``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

BACKGROUND = -1

CUBE_MAGIC = "CUBE1"
LABEL_MAGIC = "LBL1"


class CubeFormatError(ValueError):
    """Raised when a CUBE1/LBL1 file is malformed."""


@dataclass(frozen=True)
class SpectralCube:
    """M x N x L reflectance voxels, band axis contiguous."""

    voxels: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.voxels, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"cube must be a non-empty 3-D array, got shape {v.shape}")
        bad = np.flatnonzero(~np.isfinite(v))
        if bad.size:
            idx = np.unravel_index(bad[0], v.shape)
            raise ValueError(f"non-finite voxel at index {tuple(int(i) for i in idx)}")
        v.setflags(write=False)
        object.__setattr__(self, "voxels", v)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape  # type: ignore[return-value]

    @property
    def M(self) -> int:
        return self.voxels.shape[0]

    @property
    def N(self) -> int:
        return self.voxels.shape[1]

    @property
    def L(self) -> int:
        return self.voxels.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.M * self.N


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class ids in {-1, 0, ..., C-1}."""

    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.int64)
        if lab.ndim != 2:
            raise ValueError(f"label map must be 2-D, got shape {lab.shape}")
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        if lab.min() < BACKGROUND or lab.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [-1, {self.n_classes - 1}]")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape  # type: ignore[return-value]

    @property
    def flat(self) -> np.ndarray:
        return self.labels.reshape(-1)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.flat[self.flat >= 0], minlength=self.n_classes)

    def check_classes_present(self) -> None:
        counts = self.class_counts()
        missing = np.flatnonzero(counts == 0)
        if missing.size:
            raise ValueError(f"class {int(missing[0])} has no labeled pixels")


@dataclass(frozen=True)
class SplitIndex:
    train: np.ndarray
    test: np.ndarray
    seed: int
    fraction: float = field(default=0.1)


def normalize(voxels: np.ndarray) -> np.ndarray:
    """Global min-max scaling to [0, 1]; a constant cube maps to zeros."""
    v = np.asarray(voxels, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi > lo:
        return (v - lo) / (hi - lo)
    return np.zeros_like(v)


def flatten(cube: SpectralCube) -> np.ndarray:
    """Return the L x MN signature matrix; column j is pixel (j // N, j % N)."""
    return cube.voxels.reshape(cube.n_pixels, cube.L).T


def unflatten(F: np.ndarray, M: int, N: int) -> SpectralCube:
    F = np.asarray(F)
    if F.ndim != 2 or F.shape[1] != M * N:
        raise ValueError(f"signature matrix of shape {F.shape} does not fit {M}x{N} pixels")
    return SpectralCube(F.T.reshape(M, N, F.shape[0]))


def split(labels: LabelMap, fraction: float, seed: int) -> SplitIndex:
    """Stratified per-pixel split; floor(fraction * count) training pixels per class.

    Background pixels go to neither side. Raises if a class is empty or would
    receive zero training pixels.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly inside (0, 1)")
    flat = labels.flat
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(labels.n_classes):
        idx = np.flatnonzero(flat == c)
        if idx.size == 0:
            raise ValueError(f"class {c} has no labeled pixels")
        k = int(np.floor(fraction * idx.size))
        if k < 1:
            raise ValueError(
                f"class {c} has {idx.size} pixels; fraction {fraction} leaves it no training pixels"
            )
        perm = rng.permutation(idx)
        train.append(perm[:k])
        test.append(perm[k:])
    return SplitIndex(
        train=np.sort(np.concatenate(train)),
        test=np.sort(np.concatenate(test)),
        seed=seed,
        fraction=fraction,
    )


def _gaussian(x: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((x - center) / width) ** 2)


def class_templates(L: int, C: int, rng: np.random.Generator) -> np.ndarray:
    """C x L smooth class signatures (before normalization).

    Every template is a sum of three Gaussians over the band axis: two broad
    components shared by all classes (the common continuum) and one narrow
    class-specific feature whose position differs per class. Classes are
    therefore separable only through a few bands, which is what makes the
    choice of coding pattern matter.
    """
    x = np.arange(L, dtype=np.float64)
    base = 0.55 * _gaussian(x, rng.uniform(0.25, 0.4) * L, 0.35 * L)
    base += 0.35 * _gaussian(x, rng.uniform(0.6, 0.75) * L, 0.25 * L)
    # feature centers spread over the band axis, jittered, away from the edges
    slots = (np.arange(C) + 0.5) / C
    centers = (0.1 + 0.8 * slots + rng.uniform(-0.2, 0.2, C) / C) * L
    width = max(1.0, 0.015 * L)
    amp = 0.16
    out = np.empty((C, L))
    for c in range(C):
        out[c] = base + amp * _gaussian(x, centers[c], width)
    return out


def synth_labels(M: int, N: int, C: int, rng: np.random.Generator, border: int = 2,
                 tile: int = 8) -> np.ndarray:
    """Tiled blob layout: a background border and square class tiles.

    Tile classes follow a shuffled cyclic order, so every class appears
    whenever the interior holds at least C tiles.
    """
    lab = np.full((M, N), BACKGROUND, dtype=np.int64)
    inner_m, inner_n = M - 2 * border, N - 2 * border
    if inner_m < 1 or inner_n < 1:
        raise ValueError(f"{M}x{N} scene leaves no room inside a border of {border}")
    tm = int(np.ceil(inner_m / tile))
    tn = int(np.ceil(inner_n / tile))
    n_tiles = tm * tn
    if n_tiles < C:
        tile = max(1, min(inner_m, inner_n) // int(np.ceil(np.sqrt(C))))
        tm = int(np.ceil(inner_m / tile))
        tn = int(np.ceil(inner_n / tile))
        n_tiles = tm * tn
    if n_tiles < C:
        raise ValueError(f"{M}x{N} scene is too small for {C} classes")
    order = rng.permutation(np.arange(n_tiles) % C)
    grid = order.reshape(tm, tn)
    block = np.kron(grid, np.ones((tile, tile), dtype=np.int64))[:inner_m, :inner_n]
    lab[border:border + inner_m, border:border + inner_n] = block
    return lab


def synth_dataset(M: int, N: int, L: int, C: int, noise: float, seed: int,
                  border: int = 2) -> tuple[SpectralCube, LabelMap]:
    """Synthetic scene standing in for a NIR reflectance cube with C materials."""
    if C < 2:
        raise ValueError("need at least 2 classes")
    if L < 8:
        raise ValueError("need at least 8 bands")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    templates = class_templates(L, C, rng)
    labels = synth_labels(M, N, C, rng, border=border)
    background = np.full(L, 0.05)
    sig = np.where(labels[..., None] >= 0, templates[np.maximum(labels, 0)], background)
    if noise > 0:
        sig = sig + noise * rng.standard_normal(sig.shape)
    return SpectralCube(normalize(sig)), LabelMap(labels, C)


# ---------------------------------------------------------------- file formats


def _read_header(fh, magic: str, n_fields: int) -> list[int]:
    line = fh.readline(256)
    try:
        parts = line.decode("ascii").split()
    except UnicodeDecodeError as exc:
        raise CubeFormatError(f"unreadable {magic} header") from exc
    if len(parts) != n_fields + 1 or parts[0] != magic:
        raise CubeFormatError(f"expected header '{magic}' with {n_fields} fields, got {line!r}")
    try:
        dims = [int(p) for p in parts[1:]]
    except ValueError as exc:
        raise CubeFormatError(f"non-integer field in {magic} header {line!r}") from exc
    return dims


def load_cube(path: str | os.PathLike, format: str = CUBE_MAGIC,
              normalized: bool = True) -> SpectralCube:
    """Read a CUBE1 file: ``CUBE1 M N L\\n`` then M*N*L little-endian float32."""
    if format != CUBE_MAGIC:
        raise CubeFormatError(f"unsupported cube format {format!r}")
    with open(path, "rb") as fh:
        M, N, L = _read_header(fh, CUBE_MAGIC, 3)
        if min(M, N, L) < 1:
            raise CubeFormatError(f"non-positive dimension in header {M} {N} {L}")
        payload = fh.read()
    expected = M * N * L
    if len(payload) % 4:
        raise CubeFormatError(f"payload is {len(payload)} bytes, not a whole number of float32")
    got = len(payload) // 4
    if got != expected:
        raise CubeFormatError(f"header declares {M}x{N}x{L}={expected} values, payload holds {got}")
    v = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(v))
    if bad.size:
        m, n, b = np.unravel_index(bad[0], (M, N, L))
        raise CubeFormatError(f"non-finite voxel at index ({m}, {n}, {b}) (flat {bad[0]})")
    v = v.reshape(M, N, L)
    return SpectralCube(normalize(v) if normalized else v)


def save_cube(path: str | os.PathLike, cube: SpectralCube) -> None:
    M, N, L = cube.shape
    with open(path, "wb") as fh:
        fh.write(f"{CUBE_MAGIC} {M} {N} {L}\n".encode("ascii"))
        fh.write(cube.voxels.astype("<f4").tobytes())


def load_labels(path: str | os.PathLike) -> LabelMap:
    """Read an LBL1 file: ``LBL1 M N C\\n`` then M*N little-endian int16."""
    with open(path, "rb") as fh:
        M, N, C = _read_header(fh, LABEL_MAGIC, 3)
        payload = fh.read()
    if len(payload) != 2 * M * N:
        raise CubeFormatError(
            f"header declares {M}x{N}={M * N} labels, payload holds {len(payload) / 2:g}"
        )
    lab = np.frombuffer(payload, dtype="<i2").astype(np.int64).reshape(M, N)
    return LabelMap(lab, C)


def save_labels(path: str | os.PathLike, labels: LabelMap) -> None:
    M, N = labels.shape
    with open(path, "wb") as fh:
        fh.write(f"{LABEL_MAGIC} {M} {N} {labels.n_classes}\n".encode("ascii"))
        fh.write(labels.labels.astype("<i2").tobytes())
