#!/usr/bin/env python3
"""Run the 2-task toy benchmark from its five standard initial points.

Executes the runs in configs/toy2.ini, then prints each run's final point in
loss space, its min-norm Pareto residual, and the radius of the final-point
cluster around its centroid.

Usage: python3 scripts/toy_reproduction.py [--out DIR] [--threads N]
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from taskbalance.harness import load_spec, run_experiment

REPO_ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=None)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    spec = load_spec(REPO_ROOT / "configs" / "toy2.ini")
    if args.out is not None:
        spec.out_dir = args.out
    summary = run_experiment(spec, threads=args.threads)

    finals = []
    print(f"{'run':<10} {'L1':>10} {'L2':>10} {'residual':>12}")
    for r in summary["runs"]:
        if r["diverged"]:
            print(f"{r['name']:<10} DIVERGED")
            continue
        l1, l2 = r["final_losses"]
        finals.append((l1, l2))
        print(f"{r['name']:<10} {l1:>10.4f} {l2:>10.4f} "
              f"{r['final_minnorm_residual']:>12.3e}")

    if len(finals) == len(summary["runs"]):
        pts = np.asarray(finals)
        centroid = pts.mean(axis=0)
        radius = float(np.max(np.linalg.norm(pts - centroid, axis=1)))
        print(f"\ncentroid ({centroid[0]:.4f}, {centroid[1]:.4f}), "
              f"cluster radius {radius:.4f}")
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
