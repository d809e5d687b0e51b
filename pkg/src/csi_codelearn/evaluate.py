"""Accuracy, classification maps, images and the sensing-ratio x design sweep."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import BACKGROUND, LabelMap, SpectralCube, SplitIndex, flatten, split
from .nn import Model, save_model
from .sensing import (
    CONTINUOUS,
    CodingPatternSet,
    banded_design,
    identity_design,
    random_design,
    save_patterns,
    shots_for_ratio,
    pattern_image,
)
from .train import TrainConfig, TrainResult, binarity, train

DESIGNS = ("deep", "random", "banded", "identity")
COMPRESSED_DESIGNS = ("deep", "random", "banded")

# column titles of the results table, in table order
DESIGN_TITLES = {
    "random": "Random-design",
    "banded": "Traditional-design (banded stand-in)",
    "deep": "Deep-design",
    "identity": "Full-data",
}
TABLE_ORDER = ("random", "banded", "deep", "identity")

# class colours for maps; background is black, classes cycle past the end
PALETTE = np.array([
    [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48],
    [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 190],
], dtype=np.uint8)


def overall_accuracy(predictions: np.ndarray, labels: np.ndarray, indices: np.ndarray) -> float:
    """Fraction of ``indices`` whose predicted class equals the label.

    ``predictions`` may be class ids (1-D) or per-class scores (2-D); scores are
    reduced with argmax, which breaks ties toward the lowest class id.
    """
    indices = np.asarray(indices)
    if indices.size == 0:
        raise ValueError("accuracy needs at least one pixel")
    labels = np.asarray(labels).reshape(-1)
    if np.any(labels[indices] < 0):
        raise ValueError("accuracy indices include background pixels")
    pred = np.asarray(predictions)
    if pred.ndim == 2:
        pred = np.argmax(pred, axis=1)
    pred = pred.reshape(-1)
    return float(np.mean(pred[indices] == labels[indices]))


def classify_map(H: CodingPatternSet, model: Model, cube: SpectralCube) -> LabelMap:
    """Predicted class for every pixel, background included."""
    if H.S != model.optical.S or H.L != model.optical.L:
        raise ValueError(
            f"patterns are {H.S}x{H.L} but the classifier expects {model.optical.S}x{model.optical.L}"
        )
    if cube.L != H.L:
        raise ValueError(f"cube has {cube.L} bands, patterns expect {H.L}")
    pred = model.predict(flatten(cube).T, H.entries)
    return LabelMap(pred.reshape(cube.M, cube.N), model.n_classes)


def map_image(labels: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """RGB image of a label array; ``mask`` False pixels and label -1 render black."""
    labels = np.asarray(labels)
    img = PALETTE[np.maximum(labels, 0) % len(PALETTE)].copy()
    img[labels == BACKGROUND] = 0
    if mask is not None:
        img[~mask] = 0
    return img


def write_pnm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Binary PGM (2-D uint8) or PPM (H x W x 3 uint8)."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 2:
        magic = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write image of shape {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image).tobytes())


def read_pnm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, dims, maxval, body = raw.split(b"\n", 3)
    w, h = (int(v) for v in dims.split())
    if int(maxval) != 255:
        raise ValueError("only 8-bit images are supported")
    shape = (h, w) if magic == b"P5" else (h, w, 3)
    return np.frombuffer(body, dtype=np.uint8).reshape(shape)


# ---------------------------------------------------------------- trials & sweep


@dataclass
class TrialResult:
    design: str
    ratio: float
    shots: int
    seed: int
    accuracy: float             # test split, deployed (binary) patterns
    accuracy_continuous: float  # test split, patterns as trained
    accuracy_all: float         # every labeled pixel, binary patterns
    binarity: float
    out_dir: str | None = None
    result: TrainResult | None = field(default=None, repr=False)


def design_patterns(design: str, S: int, L: int, seed: int) -> CodingPatternSet | None:
    """Fixed patterns for a baseline design; None for the learned one."""
    if design == "deep":
        return None
    if design == "random":
        return random_design(S, L, 0.5, seed)
    if design == "banded":
        return banded_design(S, L)
    if design == "identity":
        if S != L:
            raise ValueError("the identity design needs ratio 1")
        return identity_design(L)
    raise ValueError(f"unknown design {design!r}")


def export_trial(res: TrainResult, F: np.ndarray, labels: LabelMap, threshold: float,
                 out_dir: str | os.PathLike) -> None:
    """Checkpoint, both pattern variants, pattern image, history and classification map."""
    os.makedirs(out_dir, exist_ok=True)
    H = res.binarized(threshold)
    save_model(os.path.join(out_dir, "model.mdl"), res.model)
    save_patterns(os.path.join(out_dir, "patterns_binary.pat"), H)
    save_patterns(os.path.join(out_dir, "patterns_continuous.pat"),
                  CodingPatternSet(res.phi.entries, CONTINUOUS))
    write_pnm(os.path.join(out_dir, "patterns.pgm"), pattern_image(H))
    res.history.to_csv(os.path.join(out_dir, "history.csv"))
    pred = res.model.predict(F.T, H.entries).reshape(labels.shape)
    write_pnm(os.path.join(out_dir, "map.ppm"), map_image(pred))


def run_trial(F: np.ndarray, labels: LabelMap, sp: SplitIndex, design: str, ratio: float,
              cfg: TrainConfig, out_dir: str | os.PathLike | None = None,
              keep: bool = False) -> TrialResult:
    """One training plus its accuracies; artifacts go to ``out_dir`` when given."""
    L = F.shape[0]
    S = shots_for_ratio(ratio, L)
    patterns = design_patterns(design, S, L, cfg.seed)
    res = train(F, labels, sp, patterns, cfg, shots=S)
    X, y = F.T, labels.flat
    H = res.binarized(cfg.threshold)
    pred_bin = res.model.predict(X, H.entries)
    pred_cont = pred_bin if res.ablation else res.model.predict(X)
    if out_dir is not None:
        export_trial(res, F, labels, cfg.threshold, out_dir)
    return TrialResult(
        design=design,
        ratio=ratio,
        shots=S,
        seed=cfg.seed,
        accuracy=overall_accuracy(pred_bin, y, sp.test),
        accuracy_continuous=overall_accuracy(pred_cont, y, sp.test),
        accuracy_all=overall_accuracy(pred_bin, y, np.flatnonzero(y >= 0)),
        binarity=binarity(res.phi.entries),
        out_dir=None if out_dir is None else str(out_dir),
        result=res if keep else None,
    )


@dataclass
class CellResult:
    design: str
    ratio: float
    shots: int
    trials: list[TrialResult]

    def _acc(self, all_labeled: bool = False) -> np.ndarray:
        return np.array([t.accuracy_all if all_labeled else t.accuracy for t in self.trials])

    @property
    def best(self) -> float:
        return float(self._acc().max())

    @property
    def mean(self) -> float:
        return float(self._acc().mean())

    @property
    def std(self) -> float:
        return float(self._acc().std())

    @property
    def best_trial(self) -> TrialResult:
        # first maximum: the lowest seed wins ties
        return self.trials[int(np.argmax(self._acc()))]


@dataclass
class SweepResult:
    cells: dict[tuple[str, float], CellResult]

    def best(self, design: str, ratio: float) -> float:
        return self.cells[(design, ratio)].best

    def ratios(self) -> list[float]:
        return sorted({r for _, r in self.cells})

    def table_rows(self, all_labeled: bool = False) -> list[list[str]]:
        """Rows = ratios, columns = designs in table order; empty where not run."""
        designs = [d for d in TABLE_ORDER if any(k[0] == d for k in self.cells)]
        rows = [["ratio"] + [DESIGN_TITLES[d] for d in designs]]
        for r in self.ratios():
            row = [f"{r:g}"]
            for d in designs:
                cell = self.cells.get((d, r))
                row.append(f"{cell._acc(all_labeled).max():.4f}" if cell else "")
            rows.append(row)
        return rows

    def write_table(self, path: str | os.PathLike, all_labeled: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.table_rows(all_labeled))

    def write_details(self, path: str | os.PathLike) -> None:
        """One row per cell: best/mean/std on the test split plus the best trial's extras."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["design", "ratio", "shots", "trials", "best", "mean", "std",
                        "best_seed", "best_continuous", "best_all_labeled", "best_binarity",
                        "artifacts"])
            for (d, r), c in sorted(self.cells.items(), key=lambda kv: (kv[0][1], kv[0][0])):
                bt = c.best_trial
                w.writerow([d, f"{r:g}", c.shots, len(c.trials), f"{c.best:.6f}", f"{c.mean:.6f}",
                            f"{c.std:.6f}", bt.seed, f"{bt.accuracy_continuous:.6f}",
                            f"{bt.accuracy_all:.6f}", f"{bt.binarity:.6f}", bt.out_dir or ""])


def sweep_cells(ratios, designs) -> list[tuple[str, float]]:
    """(design, ratio) pairs to run; identity only at ratio 1, compressed designs only below 1."""
    for d in designs:
        if d not in DESIGNS:
            raise ValueError(f"unknown design {d!r}")
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise ValueError(f"ratio {r} outside (0, 1]")
    cells = []
    for d in designs:
        if d == "identity":
            cells.append((d, 1.0))
            continue
        for r in ratios:
            if r == 1.0:
                raise ValueError(f"design {d!r} at ratio 1 is not a compressed acquisition")
            cells.append((d, float(r)))
    return cells


def cell_dir(root: str | os.PathLike, design: str, ratio: float) -> str:
    return os.path.join(root, f"{design}_r{ratio:g}")


def _trial_job(args):
    return run_trial(*args)


def sweep(cube: SpectralCube, labels: LabelMap, ratios, designs, trials: int,
          cfg: TrainConfig, fraction: float = 0.1, jobs: int = 1,
          out_dir: str | os.PathLike | None = None, log=None) -> SweepResult:
    """Train ``trials`` seeds per (design, ratio) cell and keep best/mean/std.

    Trial t uses seed ``cfg.seed + t``; the split is drawn once from
    ``cfg.seed`` and shared by every cell. With ``out_dir`` each trial's
    artifacts go to ``out_dir/<design>_r<ratio>/trial<seed>/`` and the cell's
    best seed is recorded in ``best.txt`` beside them.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    cells = sweep_cells(ratios, designs)
    F = flatten(cube)
    sp = split(labels, fraction, cfg.seed)
    jobs_list = []
    for d, r in cells:
        for t in range(trials):
            tcfg = replace(cfg, seed=cfg.seed + t)
            tdir = None if out_dir is None else os.path.join(cell_dir(out_dir, d, r), f"trial{tcfg.seed}")
            jobs_list.append((F, labels, sp, d, r, tcfg, tdir))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trial_job, jobs_list))
    else:
        results = []
        for job in jobs_list:
            results.append(_trial_job(job))
            if log is not None:
                log(describe_trial(results[-1]))
    out: dict[tuple[str, float], CellResult] = {}
    for i, (d, r) in enumerate(cells):
        trial_results = results[i * trials:(i + 1) * trials]
        cell = CellResult(d, r, trial_results[0].shots, trial_results)
        out[(d, r)] = cell
        if out_dir is not None:
            write_best_marker(cell_dir(out_dir, d, r), cell)
    return SweepResult(out)


def describe_trial(t: TrialResult) -> str:
    return (f"{t.design:8s} ratio={t.ratio:g} S={t.shots} seed={t.seed} "
            f"accuracy={t.accuracy:.4f} continuous={t.accuracy_continuous:.4f} "
            f"all_labeled={t.accuracy_all:.4f} binarity={t.binarity:.4f}")


def write_best_marker(directory: str | os.PathLike, cell: CellResult) -> None:
    bt = cell.best_trial
    with open(os.path.join(directory, "best.txt"), "w") as fh:
        fh.write(f"seed {bt.seed}\naccuracy {bt.accuracy:.6f}\n"
                 f"dir {os.path.basename(bt.out_dir or '')}\n")
