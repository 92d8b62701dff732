"""Experiment orchestration: config parsing, batch execution, trajectory
persistence, LS weight-sweep front tracing, timing, and plot-data emission.

Config files are flat INI-style key-value text with one section per run:

    [experiment]
    suite = toy2              ; or quad (parameters in [suite])
    out = results
    timing_repetitions = 5
    baseline_run = ls-run     ; optional, enables final-loss comparisons

    [suite]                   ; quad suites only; matrices are row-major
    tasks = 2
    dim = 1
    A0 = 1.0
    a0 = 0.0
    c0 = 0.0
    A1 = 1.0
    a1 = 2.0
    c1 = 0.0

    [run:example]
    method = ldc_single       ; ldc_single | ldc_double | ls | mgda
    T = 1000
    lambda = 0.1
    ...

    [sweep]                   ; LS weight sweep (2-task suites)
    weights = 0.1, 0.3, 0.5, 0.7, 0.9
    T = 20000

Trajectories persist as CSV with a header row plus a JSON sidecar carrying
the fully resolved configuration. Timing columns are excluded from any
byte-for-byte determinism comparison.
"""

from __future__ import annotations

import configparser
import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import InvalidInputError
from .metrics import delta_m
from .objective import BilevelConfig, ConfigurationError, UpperLevelConfig
from .solvers import (
    DivergenceError,
    RunConfig,
    Stepper,
    TrajectoryRecord,
    ls_step,
    min_norm_weights,
    run,
)
from .suites import TaskSuite, get_suite, quad_suite, scaled_suite, toy2_suite

PLOT_KINDS = ("loss_space", "weights_over_time", "residual_over_time", "timing_bars")

_EXPERIMENT_KEYS = {"suite", "out", "timing_repetitions", "baseline_run"}
_SUITE_KEYS_FIXED = {"tasks", "dim", "scales"}
_RUN_KEYS = {
    "method", "t", "lambda", "alpha", "beta", "n_inner", "tau", "gamma",
    "normalization", "epoch_length", "stepper_x", "stepper_w", "lr_x", "lr_w",
    "x0", "w0", "ls_weights", "record_every", "seed", "task_order",
    "inner_beta_times_lambda",
}
_SWEEP_KEYS = {"weights", "t", "alpha", "stepper", "x0", "seed"}


class SpecError(ValueError):
    """Configuration file failed to parse or validate."""


@dataclass
class SuiteSpec:
    name: str
    quad_matrices: Optional[np.ndarray] = None
    quad_centers: Optional[np.ndarray] = None
    quad_offsets: Optional[np.ndarray] = None
    scales: Optional[np.ndarray] = None

    def build(self) -> TaskSuite:
        if self.name == "toy2":
            suite = toy2_suite()
        elif self.name == "quad":
            suite = quad_suite(self.quad_matrices, self.quad_centers, self.quad_offsets)
        else:
            raise SpecError(f"unknown suite {self.name!r}")
        if self.scales is not None:
            suite = scaled_suite(suite, self.scales)
        return suite

    def to_dict(self) -> dict:
        out = {"name": self.name}
        if self.quad_matrices is not None:
            out["quad_matrices"] = self.quad_matrices.tolist()
            out["quad_centers"] = self.quad_centers.tolist()
            out["quad_offsets"] = self.quad_offsets.tolist()
        if self.scales is not None:
            out["scales"] = self.scales.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteSpec":
        return cls(
            name=d["name"],
            quad_matrices=np.asarray(d["quad_matrices"]) if "quad_matrices" in d else None,
            quad_centers=np.asarray(d["quad_centers"]) if "quad_centers" in d else None,
            quad_offsets=np.asarray(d["quad_offsets"]) if "quad_offsets" in d else None,
            scales=np.asarray(d["scales"]) if "scales" in d else None,
        )


@dataclass
class SweepSpec:
    weights: np.ndarray
    total_steps: int = 20000
    alpha: float = 1e-2
    stepper: str = "gd"
    x0: Optional[np.ndarray] = None
    seed: int = 0


@dataclass
class ExperimentSpec:
    suite: SuiteSpec
    runs: list[RunConfig] = field(default_factory=list)
    out_dir: Path = Path("results")
    timing_repetitions: int = 5
    baseline_run: Optional[str] = None
    sweep: Optional[SweepSpec] = None


def _vector(raw: str, key: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in raw.replace(",", " ").split()])
    except ValueError as err:
        raise SpecError(f"{key}: could not parse number list from {raw!r}") from err


def _parse_suite_section(name: str, section: Optional[dict]) -> SuiteSpec:
    if name == "toy2":
        scales = None
        if section:
            for key in section:
                if key != "scales":
                    raise SpecError(f"suite section: unknown key {key!r}")
            if "scales" in section:
                scales = _vector(section["scales"], "suite.scales")
        return SuiteSpec(name="toy2", scales=scales)
    if name != "quad":
        raise SpecError(f"experiment.suite: unknown suite {name!r}")
    if section is None:
        raise SpecError("suite = quad needs a [suite] section")
    try:
        K = int(section["tasks"])
        d = int(section["dim"])
    except KeyError as err:
        raise SpecError(f"suite section missing key {err.args[0]!r}") from err
    expected = _SUITE_KEYS_FIXED | {f"A{i}" for i in range(K)} \
        | {f"a{i}" for i in range(K)} | {f"c{i}" for i in range(K)}
    for key in section:
        if key not in expected:
            raise SpecError(f"suite section: unknown key {key!r}")
    mats = np.empty((K, d, d))
    centers = np.empty((K, d))
    offsets = np.zeros(K)
    for i in range(K):
        if f"A{i}" not in section:
            raise SpecError(f"suite section missing key 'A{i}'")
        if f"a{i}" not in section:
            raise SpecError(f"suite section missing key 'a{i}'")
        mat = _vector(section[f"A{i}"], f"suite.A{i}")
        if mat.size != d * d:
            raise SpecError(f"suite.A{i}: expected {d * d} row-major entries, got {mat.size}")
        mats[i] = mat.reshape(d, d)
        center = _vector(section[f"a{i}"], f"suite.a{i}")
        if center.size != d:
            raise SpecError(f"suite.a{i}: expected {d} entries, got {center.size}")
        centers[i] = center
        if f"c{i}" in section:
            offsets[i] = float(section[f"c{i}"])
    scales = _vector(section["scales"], "suite.scales") if "scales" in section else None
    return SuiteSpec(name="quad", quad_matrices=mats, quad_centers=centers,
                     quad_offsets=offsets, scales=scales)


def _parse_bool(raw: str, key: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise SpecError(f"{key}: expected a boolean, got {raw!r}")


def _parse_run_section(name: str, raw_section, num_tasks: int) -> RunConfig:
    section = {}
    for key, value in raw_section.items():
        lowered = key.lower()
        if lowered not in _RUN_KEYS:
            raise SpecError(f"[run:{name}]: unknown key {key!r}")
        section[lowered] = value

    def fget(key, default):
        return float(section[key]) if key in section else default

    def iget(key, default):
        return int(section[key]) if key in section else default

    try:
        upper = UpperLevelConfig(
            tau_mode=section.get("tau", "ones"),
            gamma=fget("gamma", 1e-8),
            task_order=_vector(section["task_order"], f"run:{name}.task_order").astype(int)
            if "task_order" in section else None,
        )
        bilevel = BilevelConfig(
            lam=fget("lambda", 0.1),
            alpha=fget("alpha", 1e-3),
            beta=fget("beta", 1e-3),
            n_inner=iget("n_inner", 50),
            upper=upper,
            norm_mode=section.get("normalization", "none"),
            inner_beta_times_lambda=_parse_bool(
                section["inner_beta_times_lambda"], f"run:{name}.inner_beta_times_lambda")
            if "inner_beta_times_lambda" in section else False,
        )
        return RunConfig(
            method=section.get("method", "ldc_single"),
            bilevel=bilevel,
            stepper_x=section.get("stepper_x", "adam"),
            stepper_w=section.get("stepper_w", "adam"),
            lr_x=fget("lr_x", None),
            lr_w=fget("lr_w", None),
            total_steps=iget("t", 1000),
            x0=_vector(section["x0"], f"run:{name}.x0") if "x0" in section else None,
            w0=_vector(section["w0"], f"run:{name}.w0") if "w0" in section else None,
            ls_weights=_vector(section["ls_weights"], f"run:{name}.ls_weights")
            if "ls_weights" in section else None,
            record_every=iget("record_every", 100),
            seed=iget("seed", 0),
            name=name,
        )
    except InvalidInputError as err:
        raise SpecError(f"[run:{name}]: {err}") from err
    except ValueError as err:
        raise SpecError(f"[run:{name}]: {err}") from err


def load_spec(path) -> ExperimentSpec:
    """Parse and fully validate an experiment config file."""
    path = Path(path)
    if not path.exists():
        raise SpecError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keys are case-sensitive (A0 vs a0)
    try:
        parser.read(path)
    except configparser.Error as err:
        raise SpecError(f"parse error in {path}: {err}") from err

    if "experiment" not in parser:
        raise SpecError("missing [experiment] section")
    exp = parser["experiment"]
    for key in exp:
        if key not in _EXPERIMENT_KEYS:
            raise SpecError(f"[experiment]: unknown key {key!r}")
    suite_name = exp.get("suite")
    if not suite_name:
        raise SpecError("[experiment]: missing key 'suite'")

    suite_section = dict(parser["suite"]) if "suite" in parser else None
    suite_spec = _parse_suite_section(suite_name, suite_section)
    num_tasks = suite_spec.build().num_tasks

    runs = []
    sweep = None
    for section_name in parser.sections():
        if section_name in ("experiment", "suite"):
            continue
        if section_name.startswith("run:"):
            runs.append(_parse_run_section(section_name[4:], parser[section_name], num_tasks))
        elif section_name == "sweep":
            sec = {k.lower(): v for k, v in parser[section_name].items()}
            for key in sec:
                if key not in _SWEEP_KEYS:
                    raise SpecError(f"[sweep]: unknown key {key!r}")
            if "weights" not in sec:
                raise SpecError("[sweep]: missing key 'weights'")
            sweep = SweepSpec(
                weights=_vector(sec["weights"], "sweep.weights"),
                total_steps=int(sec.get("t", 20000)),
                alpha=float(sec.get("alpha", 1e-2)),
                stepper=sec.get("stepper", "gd"),
                x0=_vector(sec["x0"], "sweep.x0") if "x0" in sec else None,
                seed=int(sec.get("seed", 0)),
            )
        else:
            raise SpecError(f"unknown section [{section_name}]")

    return ExperimentSpec(
        suite=suite_spec,
        runs=runs,
        out_dir=Path(exp.get("out", "results")),
        timing_repetitions=int(exp.get("timing_repetitions", 5)),
        baseline_run=exp.get("baseline_run"),
        sweep=sweep,
    )


def _fmt_vector(v: np.ndarray) -> str:
    return ", ".join(repr(float(x)) for x in np.asarray(v, dtype=float).ravel())


def save_spec(spec: ExperimentSpec, path) -> None:
    """Write an ExperimentSpec back to the config format ``load_spec`` reads.

    Floats are written with full repr precision so save -> load round-trips
    bit-identically.
    """
    lines = ["[experiment]", f"suite = {spec.suite.name}",
             f"out = {spec.out_dir}",
             f"timing_repetitions = {spec.timing_repetitions}"]
    if spec.baseline_run is not None:
        lines.append(f"baseline_run = {spec.baseline_run}")
    if spec.suite.name == "quad" or spec.suite.scales is not None:
        lines += ["", "[suite]"]
        if spec.suite.name == "quad":
            K = spec.suite.quad_matrices.shape[0]
            lines += [f"tasks = {K}", f"dim = {spec.suite.quad_matrices.shape[1]}"]
            for i in range(K):
                lines.append(f"A{i} = {_fmt_vector(spec.suite.quad_matrices[i])}")
                lines.append(f"a{i} = {_fmt_vector(spec.suite.quad_centers[i])}")
                lines.append(f"c{i} = {float(spec.suite.quad_offsets[i])!r}")
        if spec.suite.scales is not None:
            lines.append(f"scales = {_fmt_vector(spec.suite.scales)}")
    for cfg in spec.runs:
        b = cfg.bilevel
        lines += ["", f"[run:{cfg.name}]",
                  f"method = {cfg.method}",
                  f"T = {cfg.total_steps}",
                  f"lambda = {b.lam!r}",
                  f"alpha = {b.alpha!r}",
                  f"beta = {b.beta!r}",
                  f"n_inner = {b.n_inner}",
                  f"tau = {b.upper.tau_mode}",
                  f"gamma = {b.upper.gamma!r}",
                  f"normalization = {b.norm_mode}",
                  f"inner_beta_times_lambda = {str(b.inner_beta_times_lambda).lower()}",
                  f"stepper_x = {cfg.stepper_x}",
                  f"stepper_w = {cfg.stepper_w}",
                  f"record_every = {cfg.record_every}",
                  f"seed = {cfg.seed}"]
        if b.upper.task_order is not None:
            lines.append("task_order = " + ", ".join(str(i) for i in b.upper.task_order))
        if cfg.lr_x is not None:
            lines.append(f"lr_x = {cfg.lr_x!r}")
        if cfg.lr_w is not None:
            lines.append(f"lr_w = {cfg.lr_w!r}")
        if cfg.x0 is not None:
            lines.append(f"x0 = {_fmt_vector(cfg.x0)}")
        if cfg.w0 is not None:
            lines.append(f"w0 = {_fmt_vector(cfg.w0)}")
        if cfg.ls_weights is not None:
            lines.append(f"ls_weights = {_fmt_vector(cfg.ls_weights)}")
    if spec.sweep is not None:
        sw = spec.sweep
        lines += ["", "[sweep]",
                  f"weights = {_fmt_vector(sw.weights)}",
                  f"T = {sw.total_steps}",
                  f"alpha = {sw.alpha!r}",
                  f"stepper = {sw.stepper}",
                  f"seed = {sw.seed}"]
        if sw.x0 is not None:
            lines.append(f"x0 = {_fmt_vector(sw.x0)}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _csv_header(num_tasks: int, dim: int) -> list[str]:
    cols = ["step"]
    cols += [f"loss_raw_{i}" for i in range(num_tasks)]
    cols += [f"loss_norm_{i}" for i in range(num_tasks)]
    cols += [f"sigma_{i}" for i in range(num_tasks)]
    cols += ["f", "g", "phi", "minnorm_residual",
             "grad_w_g_norm", "grad_w_g_inner_norm", "norm_ratio", "wall_micros"]
    cols += [f"baseline_{i}" for i in range(num_tasks)]
    cols += [f"w_{i}" for i in range(num_tasks)]
    cols += [f"x_{j}" for j in range(dim)]
    cols += ["diverged"]
    return cols


def write_trajectory(records: list[TrajectoryRecord], path: Path, num_tasks: int, dim: int):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_csv_header(num_tasks, dim))
        for r in records:
            # repr of a builtin float round-trips exactly; numpy scalars
            # would stringify as np.float64(...) and not parse back.
            row = [r.step]
            row += [repr(float(v)) for v in r.raw_losses]
            row += [repr(float(v)) for v in r.norm_losses]
            row += [repr(float(v)) for v in r.sigma]
            row += [repr(float(r.f)), repr(float(r.g)), repr(float(r.phi)),
                    repr(float(r.min_norm_residual)),
                    repr(float(r.grad_W_g_norm)),
                    repr(float(r.grad_W_g_inner_norm)),
                    repr(float(r.norm_ratio)), repr(float(r.wall_micros))]
            row += [repr(float(v)) for v in r.baseline]
            row += [repr(float(v)) for v in r.W]
            row += [repr(float(v)) for v in r.x]
            row += [int(r.diverged)]
            writer.writerow(row)


def meta_path_for(trajectory_path) -> Path:
    """Sidecar metadata path for a trajectory CSV."""
    p = Path(trajectory_path)
    return p.with_name(p.stem + ".meta.json")


def read_trajectory(path) -> dict[str, np.ndarray]:
    """Load a trajectory CSV as a column-name -> array mapping."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.asarray(rows, dtype=float)
    if data.size == 0:
        data = np.empty((0, len(header)))
    return {name: data[:, j] for j, name in enumerate(header)}


def _run_config_to_dict(cfg: RunConfig) -> dict:
    b = cfg.bilevel
    return {
        "name": cfg.name,
        "method": cfg.method,
        "total_steps": cfg.total_steps,
        "lambda": b.lam,
        "alpha": b.alpha,
        "beta": b.beta,
        "n_inner": b.n_inner,
        "tau_mode": b.upper.tau_mode,
        "gamma": b.upper.gamma,
        "task_order": b.upper.task_order.tolist() if b.upper.task_order is not None else None,
        "normalization": b.norm_mode,
        "inner_beta_times_lambda": b.inner_beta_times_lambda,
        "stepper_x": cfg.stepper_x,
        "stepper_w": cfg.stepper_w,
        "lr_x": cfg.lr_x,
        "lr_w": cfg.lr_w,
        "x0": cfg.x0.tolist() if cfg.x0 is not None else None,
        "w0": cfg.w0.tolist() if cfg.w0 is not None else None,
        "ls_weights": cfg.ls_weights.tolist() if cfg.ls_weights is not None else None,
        "record_every": cfg.record_every,
        "seed": cfg.seed,
    }


def run_config_from_dict(d: dict) -> RunConfig:
    upper = UpperLevelConfig(
        tau_mode=d["tau_mode"], gamma=d["gamma"],
        task_order=np.asarray(d["task_order"]) if d.get("task_order") else None,
    )
    bilevel = BilevelConfig(
        lam=d["lambda"], alpha=d["alpha"], beta=d["beta"], n_inner=d["n_inner"],
        upper=upper, norm_mode=d["normalization"],
        inner_beta_times_lambda=d["inner_beta_times_lambda"],
    )
    return RunConfig(
        method=d["method"], bilevel=bilevel, stepper_x=d["stepper_x"],
        stepper_w=d["stepper_w"], lr_x=d["lr_x"], lr_w=d["lr_w"],
        total_steps=d["total_steps"],
        x0=np.asarray(d["x0"]) if d.get("x0") is not None else None,
        w0=np.asarray(d["w0"]) if d.get("w0") is not None else None,
        ls_weights=np.asarray(d["ls_weights"]) if d.get("ls_weights") is not None else None,
        record_every=d["record_every"], seed=d["seed"], name=d["name"],
    )


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

def _execute_one(cfg: RunConfig, suite_spec: SuiteSpec, out_dir: Path) -> dict:
    suite = suite_spec.build()  # each run owns a private suite instance
    result = {"name": cfg.name, "method": cfg.method, "diverged": False}
    try:
        records = run(cfg, suite)
    except DivergenceError as err:
        records = getattr(err, "records", [])
        result["diverged"] = True
        result["error"] = str(err)
    traj_path = out_dir / f"{cfg.name}.csv"
    write_trajectory(records, traj_path, suite.num_tasks, suite.dim)
    meta = {
        "run": _run_config_to_dict(cfg),
        "suite": suite_spec.to_dict(),
        "loss_stats_std": "population",
    }
    with open(out_dir / f"{cfg.name}.meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    if records:
        final = records[-1]
        result.update({
            "trajectory": str(traj_path),
            "final_step": final.step,
            "final_losses": final.raw_losses.tolist(),
            "final_minnorm_residual": final.min_norm_residual,
            "median_step_micros": float(np.median(
                [r.wall_micros for r in records if np.isfinite(r.wall_micros)] or [float("nan")])),
        })
    return result


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> dict:
    """Execute every run in the spec, persist trajectories, write a summary.

    Independent runs may execute concurrently; a failed (diverged) run is
    isolated and marked in the summary.
    """
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    if threads > 1 and len(spec.runs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda cfg: _execute_one(cfg, spec.suite, spec.out_dir), spec.runs))
    else:
        results = [_execute_one(cfg, spec.suite, spec.out_dir) for cfg in spec.runs]

    summary = {"suite": spec.suite.to_dict(), "runs": results,
               "num_runs": len(results)}
    if spec.baseline_run is not None:
        base = next((r for r in results if r["name"] == spec.baseline_run), None)
        if base is None or base["diverged"]:
            summary["baseline_comparison_error"] = \
                f"baseline run {spec.baseline_run!r} missing or diverged"
        else:
            dirs = ["lower_better"] * len(base["final_losses"])
            comparisons = {}
            for r in results:
                if r["name"] == spec.baseline_run or r["diverged"]:
                    continue
                comparisons[r["name"]] = delta_m(
                    r["final_losses"], base["final_losses"], dirs)
            summary["delta_m_vs_baseline"] = comparisons
    with open(spec.out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


# ---------------------------------------------------------------------------
# LS weight sweep / front tracing
# ---------------------------------------------------------------------------

def dominates(p, q) -> bool:
    """Componentwise dominance in loss space: p <= q with one strict."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return bool(np.all(p <= q) and np.any(p < q))


def sweep_ls_front(suite: TaskSuite, weights, total_steps: int = 20000,
                   alpha: float = 1e-2, stepper_kind: str = "gd",
                   x0=None, ldc_points=None) -> list[dict]:
    """Run LS to convergence per grid weight on a 2-task suite.

    Returns one row per weight: first-task weight, final losses, and a
    dominance flag against the supplied LDC final points (if any).
    """
    if suite.num_tasks != 2:
        raise ConfigurationError("front tracing is defined for 2-task suites")
    rows = []
    for w1 in np.asarray(weights, dtype=float):
        w = np.array([w1, 1.0 - w1])
        x = np.zeros(suite.dim) if x0 is None else np.asarray(x0, dtype=float).copy()
        stepper = Stepper(kind=stepper_kind, learning_rate=alpha)
        for t in range(total_steps):
            x, _ = ls_step(x, suite, w, stepper, step=t)
        losses = suite.eval_losses(x)
        row = {"w1": float(w1), "l1": float(losses[0]), "l2": float(losses[1]),
               "x": x.tolist()}
        if ldc_points is not None:
            row["dominated_by_ldc"] = any(dominates(p, losses) for p in ldc_points)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------

def measure_step_micros(method: str, suite: TaskSuite, steps: int = 1000,
                        repetitions: int = 5, warmup: int = 100,
                        cfg: Optional[BilevelConfig] = None) -> float:
    """Median per-step wall clock (microseconds) over timed repetitions.

    Warmup steps are excluded; the per-repetition cost is total loop time
    divided by step count, and the median across repetitions is returned.
    """
    from .solvers import ldc_double_step, ldc_single_step, mgda_step
    from .suites import fresh_normalization

    cfg = cfg or BilevelConfig()
    uniform = np.full(suite.num_tasks, 1.0 / suite.num_tasks)
    norm = fresh_normalization("none", suite.num_tasks)

    def loop(n):
        W = np.zeros(suite.num_tasks)
        x = np.zeros(suite.dim)
        steppers = (Stepper(kind="gd", learning_rate=1e-6),
                    Stepper(kind="gd", learning_rate=1e-6))
        for t in range(n):
            if method == "ldc_single":
                W, x, _ = ldc_single_step(W, x, suite, cfg, steppers, norm, step=t)
            elif method == "ldc_double":
                W, x, _ = ldc_double_step(W, x, suite, cfg, steppers, norm, step=t)
            elif method == "ls":
                x, _ = ls_step(x, suite, uniform, steppers[0], norm, step=t)
            elif method == "mgda":
                x, _ = mgda_step(x, suite, steppers[0], norm, step=t)
            else:
                raise InvalidInputError(f"unknown method {method!r}")

    loop(warmup)
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        loop(steps)
        samples.append((time.perf_counter() - t0) * 1e6 / steps)
    return float(np.median(samples))


# ---------------------------------------------------------------------------
# Plot-data emission
# ---------------------------------------------------------------------------

def _write_columns(path: Path, header: list[str], columns: list[np.ndarray]):
    with open(path, "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in zip(*columns):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _render_svg(path: Path, xs, series: dict[str, np.ndarray], xlabel: str, ylabel: str,
                logy: bool = False):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for label, ys in series.items():
        ax.plot(xs, ys, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if logy:
        ax.set_yscale("log")
    if len(series) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def emit_plot_data(trajectory_paths, kind: str, out_dir, render: bool = False) -> list[Path]:
    """Write columnar plot-data files (and optional SVG) per trajectory."""
    if kind not in PLOT_KINDS:
        raise ConfigurationError(
            f"unknown plot kind {kind!r}; valid kinds: {', '.join(PLOT_KINDS)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if kind == "timing_bars":
        rows = []
        for path in trajectory_paths:
            data = read_trajectory(path)
            meta_path = meta_path_for(path)
            method = Path(path).stem
            if meta_path.exists():
                with open(meta_path) as fh:
                    method = json.load(fh)["run"]["method"]
            micros = data["wall_micros"]
            micros = micros[np.isfinite(micros) & (micros > 0)]
            rows.append((method, float(np.median(micros)) if micros.size else float("nan")))
        out_path = out_dir / "timing_bars.txt"
        with open(out_path, "w") as fh:
            fh.write("# method median_step_micros\n")
            for method, med in rows:
                fh.write(f"{method} {med!r}\n")
            by_method = dict(rows)
            if "ldc_single" in by_method and "ls" in by_method:
                fh.write(f"# ldc_single/ls ratio: "
                         f"{by_method['ldc_single'] / by_method['ls']!r}\n")
        written.append(out_path)
        return written

    for path in trajectory_paths:
        data = read_trajectory(path)
        stem = Path(path).stem
        steps = data["step"]
        if kind == "loss_space":
            losses = [data[k] for k in sorted(data) if k.startswith("loss_raw_")]
            out_path = out_dir / f"{stem}.loss_space.txt"
            _write_columns(out_path, [f"L{i + 1}" for i in range(len(losses))], losses)
            if render and len(losses) >= 2:
                _render_svg(out_dir / f"{stem}.loss_space.svg", losses[0],
                            {"trajectory": losses[1]}, "L1", "L2")
        elif kind == "weights_over_time":
            sig_keys = sorted((k for k in data if k.startswith("sigma_")),
                              key=lambda k: int(k.split("_")[1]))
            cols = [steps] + [data[k] for k in sig_keys]
            out_path = out_dir / f"{stem}.weights_over_time.txt"
            _write_columns(out_path, ["step"] + sig_keys, cols)
            if render:
                _render_svg(out_dir / f"{stem}.weights_over_time.svg", steps,
                            {k: data[k] for k in sig_keys}, "step", "weight")
        else:  # residual_over_time
            out_path = out_dir / f"{stem}.residual_over_time.txt"
            _write_columns(out_path, ["step", "minnorm_residual"],
                           [steps, data["minnorm_residual"]])
            if render:
                _render_svg(out_dir / f"{stem}.residual_over_time.svg", steps,
                            {"residual": data["minnorm_residual"]}, "step",
                            "min-norm residual", logy=True)
        written.append(out_path)
    return written


def replay_check(trajectory_path, meta_path, tol: float = 1e-9) -> float:
    """Recompute f, g, residual from recorded checkpoints; return max error."""
    from .objective import lower_value_and_grads, upper_value_and_grads
    from .suites import NormalizationState, normalize as norm_fn

    data = read_trajectory(trajectory_path)
    with open(meta_path) as fh:
        meta = json.load(fh)
    suite = SuiteSpec.from_dict(meta["suite"]).build()
    cfg = run_config_from_dict(meta["run"])
    K, d = suite.num_tasks, suite.dim
    worst = 0.0
    n_rows = len(data["step"])
    for i in range(n_rows):
        if data["diverged"][i]:
            continue
        W = np.array([data[f"w_{k}"][i] for k in range(K)])
        x = np.array([data[f"x_{j}"][i] for j in range(d)])
        baseline = np.array([data[f"baseline_{k}"][i] for k in range(K)])
        state = NormalizationState(mode=cfg.bilevel.norm_mode, baseline=baseline)
        losses, grads = norm_fn(suite.eval_losses(x), suite.eval_grads(x), state)
        g_val, _, _ = lower_value_and_grads(W, losses, grads)
        if K >= 2:
            f_val, _, _ = upper_value_and_grads(W, losses, grads, cfg.bilevel.upper)
            worst = max(worst, abs(f_val - data["f"][i]))
        worst = max(worst, abs(g_val - data["g"][i]))
        _, residual = min_norm_weights(suite.eval_grads(x))
        worst = max(worst, abs(residual - data["minnorm_residual"][i]))
    return worst
