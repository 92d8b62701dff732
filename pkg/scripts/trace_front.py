#!/usr/bin/env python3
"""Trace the Pareto front of a 2-task quadratic suite with a LS weight sweep
and compare against the single-loop method's converged point.

Runs configs/quad2_front.ini: the swept linear-scalarization endpoints map
the front, and each row is flagged if the LDC final point dominates it.

Usage: python3 scripts/trace_front.py [--out DIR]
"""

import argparse
import sys
from pathlib import Path

from taskbalance.harness import load_spec, run_experiment, sweep_ls_front

REPO_ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()

    spec = load_spec(REPO_ROOT / "configs" / "quad2_front.ini")
    if args.out is not None:
        spec.out_dir = args.out
    summary = run_experiment(spec, threads=1)
    ldc = summary["runs"][0]
    print(f"ldc final point: L=({ldc['final_losses'][0]:.6f}, "
          f"{ldc['final_losses'][1]:.6f}), residual "
          f"{ldc['final_minnorm_residual']:.3e}\n")

    suite = spec.suite.build()
    rows = sweep_ls_front(suite, spec.sweep.weights,
                          total_steps=spec.sweep.total_steps,
                          alpha=spec.sweep.alpha, stepper_kind=spec.sweep.stepper,
                          x0=spec.sweep.x0, ldc_points=[ldc["final_losses"]])
    print(f"{'w1':>6} {'L1':>12} {'L2':>12}  dominated-by-ldc")
    for row in rows:
        print(f"{row['w1']:>6.2f} {row['l1']:>12.6f} {row['l2']:>12.6f}  "
              f"{row['dominated_by_ldc']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
