"""Joint optimization of coding patterns and classifier weights."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .data import LabelMap, SplitIndex
from .nn import ClassifierConfig, Model, binreg_grad, binreg_value, classifier_specs
from .sensing import BINARY, CONTINUOUS, CodingPatternSet

HISTORY_COLUMNS = ("epoch", "rho", "class_loss", "reg_value", "train_acc", "test_acc", "binarity")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    phi_lr: float | None = None      # None: same as lr
    rho0: float = 1e-4
    rho_gamma: float = 1.15
    rho_cap: float = 10.0
    seed: int = 0
    threshold: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    measurement_noise: float = 0.0
    recalibrate_bn: bool = True      # refresh batchnorm running stats on the train split each epoch
    monitor_size: int | None = None  # per-epoch test accuracy on this many test pixels (None: all)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("epochs must be >= 1 and batch_size >= 2")
        if self.lr <= 0 or self.rho0 <= 0 or self.rho_cap <= 0:
            raise ValueError("lr, rho0 and rho_cap must be positive")
        if self.rho_gamma <= 1:
            raise ValueError("rho_gamma must exceed 1")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie strictly inside (0, 1)")
        if self.monitor_size is not None and self.monitor_size < 1:
            raise ValueError("monitor_size must be positive")
        if isinstance(self.classifier, dict):
            self.classifier = ClassifierConfig(**self.classifier)


# Settings that binarize the patterns within 100 epochs on the synthetic
# benchmark. With the plain defaults R1 is too weak for phi to settle at 0/1.
TUNED = {"batch_size": 32, "phi_lr": 5e-3, "rho0": 1e-3, "rho_gamma": 1.25, "rho_cap": 1e5}
PRESETS = {"reference": {}, "tuned": TUNED}


def preset_config(name: str = "tuned", **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return TrainConfig(**{**PRESETS[name], **overrides})


@dataclass
class EpochRecord:
    epoch: int
    rho: float
    class_loss: float
    reg_value: float
    train_acc: float
    test_acc: float
    binarity: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in HISTORY_COLUMNS[1:]])

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "TrainHistory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), *(float(r[c]) for c in HISTORY_COLUMNS[1:]))
                    for r in rows])


@dataclass
class TrainResult:
    phi: CodingPatternSet          # continuous patterns as learned
    model: Model                   # classifier weights (theta) incl. the optical layer
    history: TrainHistory
    ablation: bool

    def binarized(self, threshold: float = 0.5) -> CodingPatternSet:
        if self.ablation:
            return CodingPatternSet(self.phi.entries, BINARY)
        return binarize(self.phi, threshold)


def rho_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Exponentially growing regularizer weight, clamped at ``rho_cap``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    # the log-space comparison avoids overflow for very late epochs
    if np.log(cfg.rho0) + epoch * np.log(cfg.rho_gamma) >= np.log(cfg.rho_cap):
        return float(cfg.rho_cap)
    return float(min(cfg.rho0 * cfg.rho_gamma ** epoch, cfg.rho_cap))


def total_loss(class_loss: float, phi: np.ndarray, rho: float) -> float:
    if rho < 0:
        raise ValueError("rho must be non-negative")
    return class_loss + rho * binreg_value(phi)


def binarity(phi: np.ndarray, tol: float = 1e-2) -> float:
    """Share of entries within ``tol`` of 0 or 1."""
    phi = np.asarray(phi)
    close = (np.abs(phi) <= tol) | (np.abs(phi - 1.0) <= tol)
    return float(close.mean())


def binarize(phi: CodingPatternSet | np.ndarray, threshold: float = 0.5) -> CodingPatternSet:
    """Hard-threshold patterns (entry >= threshold -> 1).

    A row left empty gets a 1 at its largest entry (first one on ties).
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie strictly inside (0, 1)")
    P = phi.entries if isinstance(phi, CodingPatternSet) else np.asarray(phi, dtype=np.float64)
    H = (P >= threshold).astype(np.float64)
    for s in np.flatnonzero(H.sum(axis=1) == 0):
        H[s, np.argmax(P[s])] = 1.0
    return CodingPatternSet(H, BINARY)


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, items, lr: dict | None = None) -> None:
        """One update; ``lr`` optionally maps parameter keys to their own rate."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for key, p, g in items:
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            m, v = self.m[key], self.v[key]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            rate = self.lr if lr is None else lr.get(key, self.lr)
            p -= rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    chunks = [perm[i:i + size] for i in range(0, n, size)]
    # batchnorm cannot train on a single sample
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        last = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], last])
    return chunks


def accuracy(model: Model, X: np.ndarray, y: np.ndarray, phi: np.ndarray | None = None) -> float:
    if len(y) == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean(model.predict(X, phi) == y))


def train(F: np.ndarray, labels: LabelMap, split: SplitIndex,
          design: CodingPatternSet | None = None, cfg: TrainConfig | None = None,
          shots: int | None = None, log=None) -> TrainResult:
    """Train patterns and classifier on an L x P signature matrix.

    With ``design`` given the patterns stay frozen and rho is zero (ablation
    mode, used for the fixed-design baselines); otherwise ``shots`` fresh
    continuous patterns are learned jointly with the classifier.
    """
    cfg = cfg or TrainConfig()
    if len(split.train) < 2 or len(split.test) == 0:
        raise ValueError("split needs at least two training pixels and one test pixel")
    X = np.ascontiguousarray(np.asarray(F, dtype=np.float64).T)
    y = labels.flat
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} signatures but {y.size} labels")
    L = X.shape[1]
    Xtr, ytr = X[split.train], y[split.train]
    Xte, yte = X[split.test], y[split.test]
    if cfg.monitor_size is not None and cfg.monitor_size < len(yte):
        # fixed subset for the per-epoch curve; callers score the full split themselves
        keep = np.sort(np.random.default_rng([cfg.seed, 2]).choice(len(yte), cfg.monitor_size, replace=False))
        Xte, yte = Xte[keep], yte[keep]
    if np.any(ytr < 0) or np.any(yte < 0):
        raise ValueError("split contains background pixels")

    ablation = design is not None
    if ablation:
        if design.L != L:
            raise ValueError(f"design has {design.L} bands, data has {L}")
        S = design.S
        phi0 = design.entries.copy()
    else:
        if shots is None:
            raise ValueError("shots is required when learning the patterns")
        S, phi0 = shots, None

    specs = classifier_specs(S, L, labels.n_classes, cfg.classifier)
    model = Model(specs, seed=cfg.seed, phi=phi0, trainable_phi=not ablation)
    model.optical.noise_std = cfg.measurement_noise
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    rates = {(0, "phi"): cfg.phi_lr} if cfg.phi_lr is not None else None
    rng = np.random.default_rng([cfg.seed, 1])
    history = TrainHistory()

    for epoch in range(cfg.epochs):
        rho = 0.0 if ablation else rho_schedule(epoch, cfg)
        loss_sum, correct = 0.0, 0
        for idx in _batches(len(ytr), cfg.batch_size, rng):
            loss, logits = model.loss_and_grads(Xtr[idx], ytr[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == ytr[idx]))
            if not ablation:
                model.optical.grads["phi"] = model.optical.grads["phi"] + rho * binreg_grad(model.phi)
            opt.step(model.trainable(), rates)
        if cfg.recalibrate_bn:
            model.recalibrate(Xtr)
        rec = EpochRecord(
            epoch=epoch,
            rho=rho,
            class_loss=loss_sum / len(ytr),
            reg_value=binreg_value(model.phi),
            train_acc=correct / len(ytr),
            test_acc=accuracy(model, Xte, yte),
            binarity=binarity(model.phi),
        )
        history.records.append(rec)
        if log is not None:
            log(rec)

    mode = BINARY if ablation else CONTINUOUS
    return TrainResult(CodingPatternSet(model.phi.copy(), mode), model, history, ablation)
