"""One deep run on the benchmark; prints rho, R1 and binarity per epoch.

Compare presets with --preset reference (library defaults) and --preset tuned.
"""
import argparse

from csi_codelearn import benchmark
from csi_codelearn.data import flatten, split
from csi_codelearn.sensing import shots_for_ratio
from csi_codelearn.train import preset_config, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--preset", default="tuned")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=benchmark.EPOCHS)
    ap.add_argument("--history", help="write the history CSV here")
    args = ap.parse_args()

    cube, labels = benchmark.scene()
    F = flatten(cube)
    sp = split(labels, benchmark.FRACTION, args.seed)
    cfg = preset_config(args.preset, epochs=args.epochs, seed=args.seed, monitor_size=benchmark.MONITOR)
    print("epoch,rho,reg_value,binarity,train_acc,test_acc")
    res = train(F, labels, sp, None, cfg, shots=shots_for_ratio(0.1, cube.L),
                log=lambda r: print(f"{r.epoch},{r.rho:.4g},{r.reg_value:.3e},{r.binarity:.4f},"
                                    f"{r.train_acc:.4f},{r.test_acc:.4f}", flush=True))
    if args.history:
        res.history.to_csv(args.history)


if __name__ == "__main__":
    main()
