"""3D-CASSI forward model, coding-pattern designs and pattern I/O."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .data import SpectralCube

PATTERN_MAGIC = "PAT1"
CONTINUOUS = "continuous"
BINARY = "binary"


@dataclass(frozen=True)
class CodingPatternSet:
    """S x L coding patterns, one row per snapshot pattern."""

    entries: np.ndarray
    mode: str = BINARY

    def __post_init__(self):
        H = np.array(self.entries, dtype=np.float64)
        if H.ndim != 2 or min(H.shape) < 1:
            raise ValueError(f"patterns must be a non-empty 2-D array, got shape {H.shape}")
        if self.mode not in (CONTINUOUS, BINARY):
            raise ValueError(f"unknown pattern mode {self.mode!r}")
        S, L = H.shape
        if S > L:
            raise ValueError(f"{S} patterns over {L} bands is not a compression (S must be <= L)")
        if not np.all(np.isfinite(H)):
            raise ValueError("pattern entries must be finite")
        if self.mode == BINARY:
            if not np.all((H == 0) | (H == 1)):
                raise ValueError("binary patterns must contain only 0 and 1")
            empty = np.flatnonzero(H.sum(axis=1) == 0)
            if empty.size:
                raise ValueError(f"binary pattern row {int(empty[0])} transmits nothing")
        H.setflags(write=False)
        object.__setattr__(self, "entries", H)

    @property
    def S(self) -> int:
        return self.entries.shape[0]

    @property
    def L(self) -> int:
        return self.entries.shape[1]

    @property
    def is_binary(self) -> bool:
        return self.mode == BINARY


def coded_integration(H: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Detector integration ``H @ F`` accumulated band by band, in band order.

    Every sensing path goes through this routine so that they agree bit for
    bit; BLAS matmul does not fix its summation order.
    """
    acc = np.zeros((H.shape[0], F.shape[1]))
    for band in range(H.shape[1]):
        acc += H[:, band, None] * F[None, band, :]
    return acc


def sense(patterns: CodingPatternSet, F: np.ndarray, noise_std: float = 0.0,
          rng: np.random.Generator | None = None) -> np.ndarray:
    """Compressed measurements Y = H F for an L x P signature matrix.

    ``noise_std`` adds i.i.d. Gaussian detector noise; off by default.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] != patterns.L:
        raise ValueError(f"patterns expect {patterns.L} bands, signatures have shape {F.shape}")
    Y = coded_integration(patterns.entries, F)
    if noise_std > 0:
        rng = rng if rng is not None else np.random.default_rng()
        Y = Y + noise_std * rng.standard_normal(Y.shape)
    return Y


def snapshot_assignment(S: int, M: int, N: int, offset: int = 0) -> np.ndarray:
    """Pattern index used at each pixel for each snapshot, shape (S, M, N).

    Pixel (m, n) sees pattern ``(m + n + s + offset) mod S`` at snapshot s, so
    within a snapshot neighbouring pixels use different patterns and over S
    snapshots every pixel is coded by every pattern exactly once.
    """
    m, n = np.meshgrid(np.arange(M), np.arange(N), indexing="ij")
    s = np.arange(S)[:, None, None]
    return (m[None] + n[None] + s + offset) % S


def simulate_snapshots(patterns: CodingPatternSet, cube: SpectralCube,
                       assignment: np.ndarray | None = None) -> np.ndarray:
    """Snapshot-by-snapshot acquisition followed by the per-pattern rearrangement.

    Each snapshot integrates every pixel's coded spectrum on the detector
    (one value per pixel). The raw stack holds, in row s', what snapshot s'
    recorded; rows are then regrouped so that row s of the result collects
    every pixel's measurement taken through pattern s.
    """
    if not patterns.is_binary:
        raise ValueError("snapshot simulation needs binary patterns")
    M, N, L = cube.shape
    if L != patterns.L:
        raise ValueError(f"patterns expect {patterns.L} bands, cube has {L}")
    S = patterns.S
    if assignment is None:
        assignment = snapshot_assignment(S, M, N)
    assignment = np.asarray(assignment)
    if assignment.shape != (S, M, N):
        raise ValueError(f"assignment must have shape {(S, M, N)}, got {assignment.shape}")
    if not np.all(np.sort(assignment, axis=0) == np.arange(S)[:, None, None]):
        raise ValueError("assignment must code every pixel once with each pattern")

    H = patterns.entries
    raw = np.zeros((S, M, N))
    for shot in range(S):
        code = H[assignment[shot]]                     # (M, N, L) coded aperture
        for band in range(L):                          # detector integrates over bands
            raw[shot] += code[..., band] * cube.voxels[..., band]
    raw = raw.reshape(S, M * N)
    used = assignment.reshape(S, M * N)

    Y = np.empty_like(raw)
    cols = np.arange(M * N)
    for shot in range(S):
        Y[used[shot], cols] = raw[shot]
    return Y


def sensing_ratio(S: int, L: int) -> float:
    if not 1 <= S <= L:
        raise ValueError(f"need 1 <= S <= L, got S={S}, L={L}")
    return S / L


def shots_for_ratio(ratio: float, L: int) -> int:
    """Nearest-integer shot count for a sensing ratio, clamped to [1, L]."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    # half-up rounding, not banker's
    return int(min(max(np.floor(ratio * L + 0.5), 1), L))


def random_design(S: int, L: int, density: float = 0.5, seed: int = 0) -> CodingPatternSet:
    """i.i.d. Bernoulli(density) patterns; empty rows are redrawn."""
    if not 0.0 < density < 1.0:
        raise ValueError("density must lie strictly inside (0, 1)")
    if S > L:
        raise ValueError(f"S={S} exceeds L={L}")
    rng = np.random.default_rng(seed)
    H = np.empty((S, L))
    for s in range(S):
        row = rng.random(L) < density
        while not row.any():
            row = rng.random(L) < density
        H[s] = row
    return CodingPatternSet(H, BINARY)


def band_partition(S: int, L: int) -> np.ndarray:
    """Lengths of S contiguous intervals covering L bands; longer ones first."""
    if not 1 <= S <= L:
        raise ValueError(f"need 1 <= S <= L, got S={S}, L={L}")
    q, r = divmod(L, S)
    return np.array([q + 1] * r + [q] * (S - r), dtype=np.int64)


def banded_design(S: int, L: int) -> CodingPatternSet:
    """Contiguous band-pass patterns (stand-in for a similarity-preserving design)."""
    lengths = band_partition(S, L)
    H = np.zeros((S, L))
    edges = np.concatenate([[0], np.cumsum(lengths)])
    for s in range(S):
        H[s, edges[s]:edges[s + 1]] = 1.0
    return CodingPatternSet(H, BINARY)


def identity_design(L: int) -> CodingPatternSet:
    return CodingPatternSet(np.eye(L), BINARY)


# ---------------------------------------------------------------- pattern I/O


def save_patterns(path: str | os.PathLike, patterns: CodingPatternSet) -> None:
    """Write PAT1: ``PAT1 S L mode`` then S rows of L space-separated values."""
    lines = [f"{PATTERN_MAGIC} {patterns.S} {patterns.L} {patterns.mode}"]
    for row in patterns.entries:
        if patterns.is_binary:
            lines.append(" ".join(str(int(v)) for v in row))
        else:
            lines.append(" ".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_patterns(path: str | os.PathLike) -> CodingPatternSet:
    with open(path, encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != PATTERN_MAGIC:
            raise ValueError(f"not a {PATTERN_MAGIC} file: header {header}")
        S, L, mode = int(header[1]), int(header[2]), header[3]
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != S or any(len(r) != L for r in rows):
        raise ValueError(f"{PATTERN_MAGIC} header declares {S}x{L} but body does not match")
    return CodingPatternSet(np.array(rows, dtype=np.float64), mode)


def pattern_image(patterns: CodingPatternSet, cell: int = 4) -> np.ndarray:
    """8-bit grayscale image of the patterns (rows = patterns, columns = bands).

    Continuous entries are clipped to [0, 1]; 1 renders white.
    """
    img = np.clip(patterns.entries, 0.0, 1.0)
    img = np.kron(img, np.ones((cell, cell)))
    return np.round(img * 255).astype(np.uint8)
