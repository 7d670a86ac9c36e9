#!/usr/bin/env python3
"""Run every desk-scale study and write one CSV per study.

Usage: python3 scripts/run_all_toys.py [--out DIR] [--skip NAME ...]

The ewc_convergence and pruning studies train small networks and take a
few minutes each; curvature and film_scale finish in seconds.
"""

import argparse
import sys
import time

from gvcl.cli import TOY_NAMES, cmd_toy


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/toys")
    parser.add_argument("--skip", nargs="*", default=[], choices=TOY_NAMES)
    args = parser.parse_args()
    for name in TOY_NAMES:
        if name in args.skip:
            print(f"skipping {name}")
            continue
        t0 = time.perf_counter()
        cmd_toy(name, args.out)
        print(f"{name} finished in {time.perf_counter() - t0:.1f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
