"""Command line: synth, train, sweep, eval."""
from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .data import (
    CubeFormatError,
    flatten,
    load_cube,
    load_labels,
    save_cube,
    save_labels,
    split,
    synth_dataset,
)
from .evaluate import (
    COMPRESSED_DESIGNS,
    DESIGNS,
    classify_map,
    describe_trial,
    map_image,
    overall_accuracy,
    run_trial,
    sweep,
    write_best_marker,
    write_pnm,
    CellResult,
)
from .nn import load_model
from .sensing import load_patterns
from .train import PRESETS, TrainConfig, TrainingDiverged, preset_config

OUT_ENV = "CSI_CODELEARN_OUT"

# the committed synthetic benchmark, used when no cube is given
BENCH = {"m": 64, "n": 64, "l": 96, "classes": 3, "noise": 0.05, "seed": 0}

# flag -> TrainConfig field
TRAIN_FLAGS = {
    "epochs": "epochs",
    "batch": "batch_size",
    "lr": "lr",
    "phi_lr": "phi_lr",
    "rho0": "rho0",
    "rho_gamma": "rho_gamma",
    "rho_cap": "rho_cap",
    "threshold": "threshold",
    "seed": "seed",
}


class UsageError(ValueError):
    pass


def out_dir(args, command: str) -> str:
    if args.out:
        return args.out
    return os.path.join(os.environ.get(OUT_ENV, "runs"), command)


def write_manifest(path: str, command: str, config: dict, seed: int, artifacts: list[str]) -> None:
    """Everything needed to re-run the command; written before any training."""
    manifest = {
        "command": command,
        "version": __version__,
        "numpy": np.__version__,
        "seed": seed,
        "config": config,
        "artifacts": artifacts,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def resolve_config(args) -> TrainConfig:
    """Preset, then the JSON config file, then explicit flags."""
    values: dict = {}
    if args.config:
        with open(args.config) as fh:
            values.update(json.load(fh))
    for flag, fld in TRAIN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[fld] = v
    unknown = set(values) - {f.name for f in dataclasses.fields(TrainConfig)}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return preset_config(args.preset, **values)


def load_inputs(args):
    """Cube and labels from disk, or the synthetic benchmark when neither is given."""
    if args.cube is None and args.labels is None:
        cube, labels = synth_dataset(BENCH["m"], BENCH["n"], BENCH["l"], BENCH["classes"],
                                     BENCH["noise"], BENCH["seed"])
        return cube, labels, {"cube": None, "labels": None, "synthetic": BENCH}
    if args.cube is None or args.labels is None:
        raise UsageError("--cube and --labels go together")
    cube, labels = load_cube(args.cube), load_labels(args.labels)
    if cube.M != labels.shape[0] or cube.N != labels.shape[1]:
        raise UsageError(f"cube is {cube.M}x{cube.N} but labels are {labels.shape[0]}x{labels.shape[1]}")
    return cube, labels, {"cube": os.path.abspath(args.cube), "labels": os.path.abspath(args.labels)}


def parse_list(text: str, kind=str) -> list:
    return [kind(v) for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    if args.classes < 2:
        raise UsageError("--classes must be at least 2")
    out = out_dir(args, "synth")
    cube_path = os.path.join(out, "scene.cube")
    label_path = os.path.join(out, "scene.lbl")
    config = {"m": args.m, "n": args.n, "l": args.l, "classes": args.classes, "noise": args.noise}
    write_manifest(os.path.join(out, "manifest.json"), "synth", config, args.seed,
                   [cube_path, label_path])
    cube, labels = synth_dataset(args.m, args.n, args.l, args.classes, args.noise, args.seed)
    save_cube(cube_path, cube)
    save_labels(label_path, labels)
    print(f"wrote {cube_path} ({args.m}x{args.n}x{args.l}) and {label_path} ({args.classes} classes)")
    return 0


def _trial(job):
    return run_trial(*job)


def cmd_train(args) -> int:
    design = args.design
    ratio = args.ratio if args.ratio is not None else (1.0 if design == "identity" else 0.1)
    if not 0.0 < ratio <= 1.0:
        raise UsageError(f"--ratio {ratio} outside (0, 1]")
    if design == "identity" and ratio != 1.0:
        raise UsageError("the identity design measures every band; it needs --ratio 1")
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    cfg = resolve_config(args)
    cube, labels, inputs = load_inputs(args)
    out = out_dir(args, "train")
    F = flatten(cube)
    sp = split(labels, args.split, cfg.seed)
    seeds = [cfg.seed + t for t in range(args.trials)]
    dirs = [os.path.join(out, f"trial{s}") for s in seeds]
    config = {"design": design, "ratio": ratio, "trials": args.trials, "split": args.split,
              "preset": args.preset, "train": dataclasses.asdict(cfg), **inputs}
    write_manifest(os.path.join(out, "manifest.json"), "train", config, cfg.seed,
                   dirs + [os.path.join(out, "best.txt")])
    jobs = [(F, labels, sp, design, ratio, dataclasses.replace(cfg, seed=s), d)
            for s, d in zip(seeds, dirs)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            trials = list(pool.map(_trial, jobs))
    else:
        trials = []
        for job in jobs:
            trials.append(_trial(job))
            print(describe_trial(trials[-1]), flush=True)
    cell = CellResult(design, ratio, trials[0].shots, trials)
    write_best_marker(out, cell)
    bt = cell.best_trial
    print(f"best seed {bt.seed} accuracy {bt.accuracy:.4f} (all labeled {bt.accuracy_all:.4f})")
    return 0


def cmd_sweep(args) -> int:
    ratios = parse_list(args.ratio, float)
    designs = parse_list(args.design)
    if args.full_data and "identity" not in designs:
        designs.append("identity")
    ratios_run = [r for r in ratios if r != 1.0] if any(d in COMPRESSED_DESIGNS for d in designs) else ratios
    if any(d in COMPRESSED_DESIGNS for d in designs) and not ratios_run:
        raise UsageError("compressed designs need at least one ratio below 1")
    cfg = resolve_config(args)
    cube, labels, inputs = load_inputs(args)
    out = out_dir(args, "sweep")
    table = os.path.join(out, "table.csv")
    config = {"ratios": ratios_run, "designs": designs, "trials": args.trials, "split": args.split,
              "preset": args.preset, "train": dataclasses.asdict(cfg), **inputs}
    write_manifest(os.path.join(out, "manifest.json"), "sweep", config, cfg.seed,
                   [table, os.path.join(out, "table_all_labeled.csv"), os.path.join(out, "cells.csv")])
    result = sweep(cube, labels, ratios_run, designs, args.trials, cfg, fraction=args.split,
                   jobs=args.jobs, out_dir=out, log=lambda s: print(s, flush=True))
    result.write_table(table)
    result.write_table(os.path.join(out, "table_all_labeled.csv"), all_labeled=True)
    result.write_details(os.path.join(out, "cells.csv"))
    for row in result.table_rows():
        print(",".join(row))
    return 0


def cmd_eval(args) -> int:
    if args.model is None or args.patterns is None:
        raise UsageError("eval needs --model and --patterns")
    model = load_model(args.model)
    H = load_patterns(args.patterns)
    cube, labels, _ = load_inputs(args)
    pred = classify_map(H, model, cube)
    out = out_dir(args, "eval")
    os.makedirs(out, exist_ok=True)
    y = labels.flat
    sp = split(labels, args.split, args.seed)
    acc = overall_accuracy(pred.flat, y, sp.test)
    acc_all = overall_accuracy(pred.flat, y, np.flatnonzero(y >= 0))
    map_path = os.path.join(out, "map.ppm")
    write_pnm(map_path, map_image(pred.labels))
    write_pnm(os.path.join(out, "ground_truth.ppm"), map_image(labels.labels))
    print(f"accuracy {acc:.4f}")
    print(f"accuracy_all_labeled {acc_all:.4f}")
    print(f"map {map_path}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csi-codelearn", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=None):
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command> or runs/<command>)")
        sp.add_argument("--seed", type=int, default=seed_default)

    def inputs(sp):
        sp.add_argument("--cube", help="CUBE1 file (default: the synthetic benchmark scene)")
        sp.add_argument("--labels", help="LBL1 file matching --cube")
        sp.add_argument("--split", type=float, default=0.1, help="training fraction per class")

    def training(sp, trials):
        sp.add_argument("--config", help="JSON file of training settings")
        sp.add_argument("--preset", choices=sorted(PRESETS), default="tuned")
        sp.add_argument("--trials", type=int, default=trials)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--phi-lr", type=float, dest="phi_lr")
        sp.add_argument("--rho0", type=float)
        sp.add_argument("--rho-gamma", type=float, dest="rho_gamma")
        sp.add_argument("--rho-cap", type=float, dest="rho_cap")
        sp.add_argument("--threshold", type=float)
        sp.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("synth", help="write a synthetic cube and label map")
    common(s, 0)
    s.add_argument("--m", type=int, default=64)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--l", type=int, default=96)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--noise", type=float, default=0.05)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train one design at one sensing ratio")
    common(t)
    inputs(t)
    training(t, 1)
    t.add_argument("--design", choices=DESIGNS, default="deep")
    t.add_argument("--ratio", type=float)
    t.set_defaults(func=cmd_train)

    w = sub.add_parser("sweep", help="sensing-ratio x design table")
    common(w)
    inputs(w)
    training(w, 5)
    w.add_argument("--design", "--designs", dest="design", default="deep,random,banded",
                   help="comma-separated designs")
    w.add_argument("--ratio", "--ratios", dest="ratio", default="0.1,0.2,0.3,0.4,0.5",
                   help="comma-separated sensing ratios")
    w.add_argument("--no-full-data", dest="full_data", action="store_false",
                   help="skip the identity (full-data) row")
    w.set_defaults(func=cmd_sweep)

    e = sub.add_parser("eval", help="accuracy and classification map of a checkpoint")
    common(e, 0)
    inputs(e)
    e.add_argument("--model", help="MDL1 checkpoint")
    e.add_argument("--patterns", help="PAT1 patterns to deploy (usually the binarized ones)")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ValueError, OSError, CubeFormatError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
