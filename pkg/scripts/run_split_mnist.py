#!/usr/bin/env python3
"""Run the 5-task Split-MNIST benchmark for several methods and seeds.

Usage: python3 scripts/run_split_mnist.py --data-root PATH [--out DIR]
                                          [--jobs N] [--seeds 0 1 2]

Expects the four standard IDX files (train/t10k images and labels,
optionally gzipped) under --data-root. Writes per-cell records plus
summary.csv and calibration.csv under <out>/split_mnist/.
"""

import argparse
import sys
import tempfile

from gvcl.cli import cmd_run
from gvcl.config import ExperimentConfig, save_config
from gvcl.objectives import GVCLConfig
from gvcl.runner import RunnerConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-root", required=True)
    parser.add_argument("--out", default="runs")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--methods", nargs="+",
                        default=["vcl", "gvcl", "gvcl_film", "ewc"])
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--beta", type=float, default=0.2)
    parser.add_argument("--lam", type=float, default=100.0)
    args = parser.parse_args()

    cfg = ExperimentConfig(
        name="split_mnist",
        dataset="split_mnist",
        methods=tuple(args.methods),
        seeds=tuple(args.seeds),
        runner=RunnerConfig(
            gvcl=GVCLConfig(
                beta=args.beta, lam=args.lam, epochs=args.epochs,
                batch_size=256, eval_samples=20,
            )
        ),
    )
    with tempfile.NamedTemporaryFile("w", suffix=".ini", delete=False) as f:
        path = f.name
    save_config(cfg, path)
    return cmd_run(path, args.jobs, args.data_root, args.out)


if __name__ == "__main__":
    sys.exit(main())
