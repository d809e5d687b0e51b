"""Full ratio x design table (0.1-0.5 plus the full-data row) on the synthetic benchmark.

Several times the cost of run_benchmark.py; use --jobs on a multi-core box.
"""
import argparse
import os

from csi_codelearn import benchmark


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.environ.get("CSI_CODELEARN_OUT", "runs"), "table"))
    ap.add_argument("--trials", type=int, default=benchmark.TRIALS)
    ap.add_argument("--designs", default="deep,random,banded")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    designs = args.designs.split(",") + ["identity"]
    res = benchmark.run(designs, ratios=benchmark.RATIOS, trials=args.trials, jobs=args.jobs,
                        out_dir=args.out, log=print)
    res.write_table(os.path.join(args.out, "table.csv"))
    res.write_table(os.path.join(args.out, "table_all_labeled.csv"), all_labeled=True)
    res.write_details(os.path.join(args.out, "cells.csv"))
    for row in res.table_rows():
        print(",".join(row))


if __name__ == "__main__":
    main()
