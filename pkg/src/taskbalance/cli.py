"""Command-line entry point.

Subcommands mirror the experiment lifecycle:

    taskbalance run <spec>            execute every run in a config file
    taskbalance sweep <spec>          LS weight sweep / front tracing
    taskbalance gradcheck [--suite]   finite-difference gradient audit
    taskbalance pareto <traj.csv>...  final Pareto residual per trajectory
    taskbalance plot --kind K <files> emit plot-data files (and SVGs)

Exit codes: 0 success, 1 validation error, 2 divergence in any run.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import InvalidInputError
from .gradcheck import full_gradient_report
from .harness import (
    PLOT_KINDS,
    ConfigurationError,
    SpecError,
    emit_plot_data,
    load_spec,
    meta_path_for,
    read_trajectory,
    run_experiment,
    sweep_ls_front,
    SuiteSpec,
)
from .solvers import min_norm_weights

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DIVERGENCE = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taskbalance")
    parser.add_argument("--out", type=Path, default=None, help="output directory override")
    parser.add_argument("--seed", type=int, default=None, help="seed override for all runs")
    parser.add_argument("--threads", type=int, default=1, help="parallel runs per experiment")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("spec", type=Path)

    p_sweep = sub.add_parser("sweep", help="LS weight sweep on a 2-task suite")
    p_sweep.add_argument("spec", type=Path)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_grad.add_argument("--suite", default=None,
                        help="restrict to targets whose name contains this id")
    p_grad.add_argument("--points", type=int, default=100)
    p_grad.add_argument("--tol", type=float, default=1e-5)

    p_pareto = sub.add_parser("pareto", help="final Pareto residual of trajectories")
    p_pareto.add_argument("trajectories", nargs="+", type=Path)

    p_plot = sub.add_parser("plot", help="emit plot-data files from trajectories")
    p_plot.add_argument("--kind", required=True, choices=PLOT_KINDS)
    p_plot.add_argument("--render", action="store_true", help="also write SVG plots")
    p_plot.add_argument("files", nargs="+", type=Path)

    return parser


def _cmd_run(args) -> int:
    spec = load_spec(args.spec)
    if args.out is not None:
        spec.out_dir = args.out
    if args.seed is not None:
        for cfg in spec.runs:
            cfg.seed = args.seed
    summary = run_experiment(spec, threads=max(1, args.threads))
    diverged = [r["name"] for r in summary["runs"] if r["diverged"]]
    print(f"{summary['num_runs']} run(s) complete -> {spec.out_dir / 'summary.json'}")
    for r in summary["runs"]:
        status = "DIVERGED" if r["diverged"] else "ok"
        residual = r.get("final_minnorm_residual", float("nan"))
        print(f"  {r['name']:<20} {r['method']:<12} {status:<9} "
              f"final residual {residual:.3e}")
    return EXIT_DIVERGENCE if diverged else EXIT_OK


def _cmd_sweep(args) -> int:
    spec = load_spec(args.spec)
    if spec.sweep is None:
        raise SpecError("config has no [sweep] section")
    if args.out is not None:
        spec.out_dir = args.out
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    suite = spec.suite.build()

    # Any LDC runs in the same spec provide candidate front points for the
    # dominance flags.
    ldc_points = []
    for cfg in spec.runs:
        if cfg.method.startswith("ldc"):
            from .solvers import run as run_fn
            records = run_fn(cfg, spec.suite.build())
            ldc_points.append(records[-1].raw_losses)

    rows = sweep_ls_front(
        suite, spec.sweep.weights, total_steps=spec.sweep.total_steps,
        alpha=spec.sweep.alpha, stepper_kind=spec.sweep.stepper,
        x0=spec.sweep.x0, ldc_points=ldc_points or None)
    out_path = spec.out_dir / "ls_sweep.json"
    with open(out_path, "w") as fh:
        json.dump(rows, fh, indent=2)
    print(f"{len(rows)} sweep point(s) -> {out_path}")
    for row in rows:
        flag = ""
        if row.get("dominated_by_ldc"):
            flag = "  [dominated]"
        print(f"  w1={row['w1']:.3f}  L1={row['l1']:.6f}  L2={row['l2']:.6f}{flag}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    report = full_gradient_report(points=args.points)
    failures = 0
    for target in sorted(report):
        if args.suite and args.suite not in target:
            continue
        err = report[target]
        ok = err <= args.tol
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {target:<40} max rel err {err:.3e}")
    return EXIT_OK if failures == 0 else EXIT_VALIDATION


def _cmd_pareto(args) -> int:
    for path in args.trajectories:
        data = read_trajectory(path)
        if len(data["step"]) == 0:
            print(f"{path}: empty trajectory")
            continue
        meta_path = meta_path_for(path)
        if meta_path.exists():
            with open(meta_path) as fh:
                meta = json.load(fh)
            suite = SuiteSpec.from_dict(meta["suite"]).build()
            x = np.array([data[f"x_{j}"][-1] for j in range(suite.dim)])
            _, residual = min_norm_weights(suite.eval_grads(x))
        else:
            residual = float(data["minnorm_residual"][-1])
        print(f"{path}: final Pareto residual {residual:.6e}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    out_dir = args.out if args.out is not None else Path(".")
    written = emit_plot_data(args.files, args.kind, out_dir, render=args.render)
    for path in written:
        print(path)
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "gradcheck": _cmd_gradcheck,
        "pareto": _cmd_pareto,
        "plot": _cmd_plot,
    }
    try:
        return handlers[args.command](args)
    except (SpecError, InvalidInputError, ConfigurationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
