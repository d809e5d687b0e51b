"""Ratio-0.1 comparison of all four designs on the synthetic benchmark.

    python3 scripts/run_benchmark.py --out runs/benchmark --trials 5
"""
import argparse
import os
import time

from csi_codelearn import benchmark


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.environ.get("CSI_CODELEARN_OUT", "runs"), "benchmark"))
    ap.add_argument("--trials", type=int, default=benchmark.TRIALS)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    t0 = time.perf_counter()
    res = benchmark.run(["deep", "random", "banded", "identity"], ratios=(0.1,), trials=args.trials,
                        seed=args.seed, jobs=args.jobs, out_dir=args.out, log=print)
    os.makedirs(args.out, exist_ok=True)
    res.write_table(os.path.join(args.out, "table.csv"))
    res.write_details(os.path.join(args.out, "cells.csv"))
    for (design, ratio), cell in sorted(res.cells.items()):
        print(f"{design:8s} ratio={ratio:g} best={cell.best:.4f} mean={cell.mean:.4f} std={cell.std:.4f}")
    print(f"elapsed {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
