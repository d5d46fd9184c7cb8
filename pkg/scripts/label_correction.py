#!/usr/bin/env python3
"""Track how many training labels the model gets right over time.

For each seed this prints the accuracy of the given (noisy) labels, the
model-argmax accuracy on the training set at the end of warm-up, and the
same quantity after the last epoch.

Example:
  python scripts/label_correction.py --kind mixed --rho 0.4 --c 30 --d 8 --n 6000
"""
from __future__ import annotations

import argparse

import numpy as np

from rectmeta.experiment import DataConfig, ExperimentConfig, NoiseConfig, run
from rectmeta.trainer import TrainConfig


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--kind", default="symmetric", choices=["symmetric", "asymmetric", "mixed"])
    p.add_argument("--rho", type=float, default=0.4)
    p.add_argument("--n", type=int, default=1500)
    p.add_argument("--c", type=int, default=3)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--spread", type=float, default=0.25)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--alpha", type=float, default=0.5)
    args = p.parse_args(argv)

    pairs = "" if args.kind == "symmetric" else "adjacent"
    tcfg = TrainConfig.desk(alpha=args.alpha, q=10 if args.alpha > 0 else 0)
    rows = []
    for seed in (int(s) for s in args.seeds.split(",")):
        cfg = ExperimentConfig(
            data=DataConfig("blobs", args.n, args.c, args.d, args.spread),
            noise=NoiseConfig(args.kind, args.rho, pairs),
            train=tcfg,
        ).with_seed(seed)
        res = run(cfg)
        lc = [r.label_correction_accuracy for r in res.history]
        rows.append((res.original_label_accuracy, lc[tcfg.start_epoch - 1], lc[-1]))
        print(f"seed {seed}: original {rows[-1][0]:.4f}  warm-up {rows[-1][1]:.4f}  final {rows[-1][2]:.4f}")
    mean = np.mean(rows, axis=0)
    print(f"mean:   original {mean[0]:.4f}  warm-up {mean[1]:.4f}  final {mean[2]:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
