"""The committed synthetic benchmark: scene, protocol and training settings."""
from __future__ import annotations

from .data import LabelMap, SpectralCube, synth_dataset
from .evaluate import SweepResult, sweep
from .train import TrainConfig, preset_config

SCENE = {"M": 64, "N": 64, "L": 96, "C": 3, "noise": 0.05, "seed": 0}
FRACTION = 0.1
RATIOS = (0.1, 0.2, 0.3, 0.4, 0.5)
EPOCHS = 100
TRIALS = 5
MONITOR = 512  # test pixels scored per epoch for the history curve


def scene() -> tuple[SpectralCube, LabelMap]:
    s = SCENE
    return synth_dataset(s["M"], s["N"], s["L"], s["C"], s["noise"], s["seed"])


def config(seed: int = 0, **overrides) -> TrainConfig:
    kw = {"epochs": EPOCHS, "seed": seed, "monitor_size": MONITOR}
    kw.update(overrides)
    return preset_config("tuned", **kw)


def run(designs, ratios=(0.1,), trials: int = TRIALS, seed: int = 0, jobs: int = 1,
        out_dir=None, log=None, **overrides) -> SweepResult:
    cube, labels = scene()
    return sweep(cube, labels, list(ratios), list(designs), trials, config(seed, **overrides),
                 fraction=FRACTION, jobs=jobs, out_dir=out_dir, log=log)
