#!/usr/bin/env python3
"""Per-step wall-clock comparison of the four methods across task counts.

Measures median per-step cost (microseconds) on random quadratic suites and
prints the ldc_single / ls ratio per task count plus a linear fit of mgda
cost against K.

Usage: python3 scripts/timing_comparison.py [--dim D] [--steps N]
"""

import argparse
import sys

import numpy as np

from taskbalance.harness import measure_step_micros
from taskbalance.suites import random_quad_suite

METHODS = ("ls", "ldc_single", "ldc_double", "mgda")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dim", type=int, default=400)
    parser.add_argument("--steps", type=int, default=100)
    parser.add_argument("--tasks", type=int, nargs="+", default=[2, 11, 40])
    args = parser.parse_args()

    header = f"{'K':>4}" + "".join(f"{m:>14}" for m in METHODS) + f"{'ldc/ls':>10}"
    print(header)
    mgda_costs = []
    for K in args.tasks:
        suite = random_quad_suite(K, args.dim, np.random.default_rng(K))
        costs = {m: measure_step_micros(m, suite, steps=args.steps,
                                        repetitions=5, warmup=20)
                 for m in METHODS}
        mgda_costs.append(costs["mgda"])
        row = f"{K:>4}" + "".join(f"{costs[m]:>14.1f}" for m in METHODS)
        print(row + f"{costs['ldc_single'] / costs['ls']:>10.3f}")

    if len(args.tasks) >= 3:
        A = np.vstack([args.tasks, np.ones(len(args.tasks))]).T
        coef, *_ = np.linalg.lstsq(A, np.asarray(mgda_costs), rcond=None)
        pred = A @ coef
        y = np.asarray(mgda_costs)
        r2 = 1.0 - np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2)
        print(f"\nmgda cost vs K: slope {coef[0]:.1f} us/task, R^2 {r2:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
