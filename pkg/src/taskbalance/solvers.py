"""Step engines and training loops.

Four methods are provided:
  * ``ldc_single`` -- single-loop penalized updates: both blocks step along
    gradients of f + lam * g evaluated at the same (W, x);
  * ``ldc_double`` -- same x update, W update carries the correction term
    -lam * grad_W g(W, z_N) with z_N from a warm-started inner loop;
  * ``ls``         -- fixed-weight linear scalarization;
  * ``mgda``       -- descent along the min-norm convex combination of task
    gradients (Frank-Wolfe on the simplex, closed form for K=2).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import InvalidInputError, softmax
from .objective import (
    BilevelConfig,
    ConfigurationError,
    lower_value_and_grads,
    solve_lower_level,
    upper_value_and_grads,
)
from .suites import (
    NormalizationState,
    TaskSuite,
    capture_baseline,
    fresh_normalization,
    normalize,
)

DIVERGENCE_LIMIT = 1e12

METHODS = ("ldc_single", "ldc_double", "ls", "mgda")


class DivergenceError(RuntimeError):
    """Raised when a loss or gradient norm blows up or turns non-finite."""

    def __init__(self, message: str, step: int, state=None):
        super().__init__(message)
        self.step = step
        self.state = state  # last good (W, x)


@dataclass
class Stepper:
    """Plain GD or Adam on a single variable."""

    kind: str = "gd"  # gd | adam
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    t: int = 0

    def __post_init__(self):
        if self.kind not in ("gd", "adam"):
            raise InvalidInputError(f"unknown stepper kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be positive")

    def update(self, var: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.kind == "gd":
            return var - self.learning_rate * grad
        if self.m is None:
            self.m = np.zeros_like(var)
            self.v = np.zeros_like(var)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return var - self.learning_rate * mhat / (np.sqrt(vhat) + self.eps)


def _check_finite(step: int, state, *arrays, magnitude: bool = True):
    """Fail fast on non-finite values; optionally also on blow-up.

    The magnitude bound applies to raw losses and gradients. Normalized
    quantities are exempt: a floored rescale baseline (zero initial loss)
    legitimately produces huge but finite normalized gradients.
    """
    for arr in arrays:
        a = np.asarray(arr)
        bad = not np.all(np.isfinite(a))
        if magnitude and not bad:
            bad = np.abs(a).max() > DIVERGENCE_LIMIT
        if bad:
            raise DivergenceError(f"divergence at step {step}", step=step, state=state)


# ---------------------------------------------------------------------------
# Min-norm weights (MGDA direction)
# ---------------------------------------------------------------------------

def _min_norm_2(G: np.ndarray):
    g1, g2 = G[0], G[1]
    diff = g1 - g2
    denom = float(diff @ diff)
    if denom < 1e-30:
        w1 = 0.5
    else:
        # minimize ||w g1 + (1-w) g2||^2 over w in [0, 1]
        w1 = float(np.clip((g2 - g1) @ g2 / denom, 0.0, 1.0))
    w = np.array([w1, 1.0 - w1])
    d = G.T @ w
    return w, float(d @ d)


def min_norm_weights(G, max_iter: int = 2000, gap_tol: float = 1e-10,
                     force_frank_wolfe: bool = False):
    """Weights minimizing ||G^T w||^2 over the simplex, plus the residual.

    Exact closed form for K=2; pairwise Frank-Wolfe with exact line search
    otherwise (pairwise steps move mass directly from the worst active
    vertex to the best one, avoiding the sublinear zig-zag of plain
    Frank-Wolfe near simplex faces). ``force_frank_wolfe`` skips the closed
    form (used to cross-check it).
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    K = G.shape[0]
    if K == 1:
        return np.array([1.0]), float(G[0] @ G[0])
    if K == 2 and not force_frank_wolfe:
        return _min_norm_2(G)

    M = G @ G.T
    w = np.full(K, 1.0 / K)
    for _ in range(max_iter):
        grad = 2.0 * (M @ w)
        s = int(np.argmin(grad))
        gap = float(grad @ w - grad[s])
        if gap <= gap_tol:
            break
        # worst active vertex: largest gradient among coordinates with mass
        active = np.flatnonzero(w > 0)
        v = int(active[np.argmax(grad[active])])
        if v == s:
            break
        # move along e_s - e_v; curvature is d^T M d for that direction
        curvature = M[s, s] - 2.0 * M[s, v] + M[v, v]
        max_step = float(w[v])
        if curvature <= 0:
            step = max_step
        else:
            step = float(np.clip((grad[v] - grad[s]) / (2.0 * curvature),
                                 0.0, max_step))
        if step == 0.0:
            break
        w[s] += step
        w[v] -= step
        if w[v] < 1e-16:
            w[v] = 0.0
    w = np.maximum(w, 0.0)
    w = w / w.sum()
    return w, float(w @ M @ w)


# ---------------------------------------------------------------------------
# Single training steps
# ---------------------------------------------------------------------------

def _bilevel_grads(W, x, suite, cfg, norm_state, step):
    raw_losses = suite.eval_losses(x)
    raw_grads = suite.eval_grads(x)
    _check_finite(step, (W, x), raw_losses, raw_grads)
    losses, grads = normalize(raw_losses, raw_grads, norm_state)
    g, grad_x_g, grad_W_g = lower_value_and_grads(W, losses, grads)
    f, grad_x_f, grad_W_f = upper_value_and_grads(W, losses, grads, cfg.upper)
    return raw_losses, losses, f, g, grad_x_f, grad_W_f, grad_x_g, grad_W_g


def ldc_single_step(W, x, suite: TaskSuite, cfg: BilevelConfig, steppers,
                    norm_state: NormalizationState, step: int = 0):
    """One single-loop update; both blocks use gradients at the same (W, x)."""
    raw, losses, f, g, gxf, gWf, gxg, gWg = _bilevel_grads(W, x, suite, cfg,
                                                           norm_state, step)
    _check_finite(step, (W, x), gxf, gxg, gWf, gWg, magnitude=False)
    dx = gxf + cfg.lam * gxg
    dW = gWf + cfg.lam * gWg
    stepper_x, stepper_W = steppers
    x2 = stepper_x.update(x, dx)
    W2 = stepper_W.update(W, dW)
    diag = {
        "f": f,
        "g": g,
        "phi": f + cfg.lam * g,
        "raw_losses": raw,
        "norm_losses": losses,
        "grad_W_g_norm": float(np.linalg.norm(gWg)),
    }
    return W2, x2, diag


def inner_z_loop(W, z0, suite: TaskSuite, beta_eff: float, n_iters: int,
                 norm_state: NormalizationState) -> np.ndarray:
    """N plain gradient steps on g(W, .) at fixed W, warm-started at z0."""
    if n_iters < 1:
        raise ConfigurationError("inner loop needs n_iters >= 1")
    if beta_eff <= 0:
        raise ConfigurationError("beta_eff must be positive")
    sigma = softmax(W)
    z = np.asarray(z0, dtype=float).copy()
    for n in range(n_iters):
        _, grads = normalize(suite.eval_losses(z), suite.eval_grads(z), norm_state)
        z = z - beta_eff * (grads.T @ sigma)
        if not np.all(np.isfinite(z)):
            raise DivergenceError(f"inner loop diverged at iteration {n}", step=n)
    return z


def ldc_double_step(W, x, suite: TaskSuite, cfg: BilevelConfig, steppers,
                    norm_state: NormalizationState, step: int = 0,
                    drop_correction: bool = False, exact_inner: bool = False):
    """One double-loop update: W carries -lam * grad_W g(W, z_N).

    ``drop_correction`` zeroes the correction term (structural comparison
    with the single-loop step); ``exact_inner`` substitutes the closed-form
    lower-level solution for z_N when the suite provides one.
    """
    raw, losses, f, g, gxf, gWf, gxg, gWg = _bilevel_grads(W, x, suite, cfg,
                                                           norm_state, step)
    _check_finite(step, (W, x), gxf, gxg, gWf, gWg, magnitude=False)

    if drop_correction:
        gWg_inner = np.zeros_like(gWg)
    else:
        if exact_inner:
            zN = solve_lower_level(W, suite, norm_state)
        else:
            zN = inner_z_loop(W, x, suite, cfg.beta_eff, cfg.n_inner, norm_state)
        l_z, G_z = normalize(suite.eval_losses(zN), suite.eval_grads(zN), norm_state)
        _, _, gWg_inner = lower_value_and_grads(W, l_z, G_z)

    dx = gxf + cfg.lam * gxg
    dW = gWf + cfg.lam * (gWg - gWg_inner)
    stepper_x, stepper_W = steppers
    x2 = stepper_x.update(x, dx)
    W2 = stepper_W.update(W, dW)

    inner_norm = float(np.linalg.norm(gWg_inner))
    outer_norm = float(np.linalg.norm(gWg))
    diag = {
        "f": f,
        "g": g,
        "phi": f + cfg.lam * g,
        "raw_losses": raw,
        "norm_losses": losses,
        "grad_W_g_norm": outer_norm,
        "grad_W_g_inner_norm": inner_norm,
        "norm_ratio": outer_norm / max(inner_norm, 1e-15),
    }
    return W2, x2, diag


def ls_step(x, suite: TaskSuite, weights, stepper: Stepper,
            norm_state: Optional[NormalizationState] = None, step: int = 0):
    """Fixed-weight scalarization step: x <- stepper(x, G^T w)."""
    w = np.asarray(weights, dtype=float)
    if norm_state is None:
        norm_state = fresh_normalization("none", suite.num_tasks)
    raw = suite.eval_losses(x)
    raw_grads = suite.eval_grads(x)
    _check_finite(step, x, raw, raw_grads)
    losses, grads = normalize(raw, raw_grads, norm_state)
    _check_finite(step, x, grads, magnitude=False)
    direction = grads.T @ w
    x2 = stepper.update(x, direction)
    diag = {"raw_losses": raw, "norm_losses": losses, "g": float(w @ losses)}
    return x2, diag


def mgda_step(x, suite: TaskSuite, stepper: Stepper,
              norm_state: Optional[NormalizationState] = None, step: int = 0):
    """Min-norm descent step: x <- stepper(x, G^T w*) with w* from Frank-Wolfe."""
    if norm_state is None:
        norm_state = fresh_normalization("none", suite.num_tasks)
    raw = suite.eval_losses(x)
    raw_grads = suite.eval_grads(x)
    _check_finite(step, x, raw, raw_grads)
    losses, grads = normalize(raw, raw_grads, norm_state)
    _check_finite(step, x, grads, magnitude=False)
    w, residual = min_norm_weights(grads)
    x2 = stepper.update(x, grads.T @ w)
    diag = {"raw_losses": raw, "norm_losses": losses, "min_norm_residual": residual,
            "weights": w}
    return x2, diag


# ---------------------------------------------------------------------------
# Run orchestration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """One training run: method, hyperparameters, initial point, recording."""

    method: str = "ldc_single"
    bilevel: BilevelConfig = field(default_factory=BilevelConfig)
    stepper_x: str = "adam"
    stepper_w: str = "adam"
    lr_x: Optional[float] = None  # default: bilevel.alpha
    lr_w: Optional[float] = None
    total_steps: int = 1000
    x0: Optional[np.ndarray] = None
    w0: Optional[np.ndarray] = None  # default: zeros
    ls_weights: Optional[np.ndarray] = None
    record_every: int = 100
    seed: int = 0
    name: str = "run"

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown method {self.method!r}")
        if self.total_steps < 1:
            raise InvalidInputError("total_steps must be >= 1")
        if self.record_every < 1:
            raise InvalidInputError("record_every must be >= 1")
        if self.method == "ls":
            if self.ls_weights is None:
                raise InvalidInputError("ls method needs ls_weights")
            w = np.asarray(self.ls_weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise InvalidInputError("ls_weights must lie on the simplex")


@dataclass
class TrajectoryRecord:
    step: int
    raw_losses: np.ndarray
    norm_losses: np.ndarray
    sigma: np.ndarray
    f: float
    g: float
    phi: float
    min_norm_residual: float
    grad_W_g_norm: float
    grad_W_g_inner_norm: float
    norm_ratio: float
    wall_micros: float
    W: np.ndarray
    x: np.ndarray
    baseline: np.ndarray = None
    diverged: bool = False


def _make_steppers(cfg: RunConfig):
    lr_x = cfg.lr_x if cfg.lr_x is not None else cfg.bilevel.alpha
    lr_w = cfg.lr_w if cfg.lr_w is not None else cfg.bilevel.alpha
    return Stepper(kind=cfg.stepper_x, learning_rate=lr_x), \
        Stepper(kind=cfg.stepper_w, learning_rate=lr_w)


def run(cfg: RunConfig, suite: TaskSuite) -> list[TrajectoryRecord]:
    """Execute a full training run, recording diagnostics periodically.

    Deterministic for a fixed seed: the RNG is used only to draw a random
    initial point when x0 is not given.
    """
    rng = np.random.default_rng(cfg.seed)
    x = np.asarray(cfg.x0, dtype=float).copy() if cfg.x0 is not None \
        else rng.standard_normal(suite.dim)
    W = np.asarray(cfg.w0, dtype=float).copy() if cfg.w0 is not None \
        else np.zeros(suite.num_tasks)

    stepper_x, stepper_w = _make_steppers(cfg)
    bcfg = cfg.bilevel
    norm_state = fresh_normalization(bcfg.norm_mode, suite.num_tasks)
    records: list[TrajectoryRecord] = []

    def record(step, diag, W_now, x_now, wall_micros, diverged=False):
        # Everything except wall clock and the step-internal inner-loop
        # norms is recomputed at the recorded (W, x) so the row replays
        # exactly from its own checkpoint.
        raw = suite.eval_losses(x_now)
        grads = suite.eval_grads(x_now)
        norm_losses, norm_grads = normalize(raw, grads, norm_state)
        _, residual = min_norm_weights(grads)
        g_val, _, gWg = lower_value_and_grads(W_now, norm_losses, norm_grads)
        if suite.num_tasks >= 2:
            f_val, _, _ = upper_value_and_grads(W_now, norm_losses, norm_grads, bcfg.upper)
        else:
            f_val = float("nan")
        records.append(TrajectoryRecord(
            step=step,
            raw_losses=np.asarray(raw, dtype=float),
            norm_losses=np.asarray(norm_losses, dtype=float),
            sigma=softmax(W_now),
            f=f_val,
            g=g_val,
            phi=f_val + bcfg.lam * g_val,
            min_norm_residual=residual,
            grad_W_g_norm=float(np.linalg.norm(gWg)),
            grad_W_g_inner_norm=diag.get("grad_W_g_inner_norm", float("nan")),
            norm_ratio=diag.get("norm_ratio", float("nan")),
            wall_micros=wall_micros,
            W=W_now.copy(),
            x=np.asarray(x_now, dtype=float).copy(),
            baseline=norm_state.baseline.copy(),
            diverged=diverged,
        ))

    for t in range(cfg.total_steps):
        norm_state = capture_baseline(suite.eval_losses(x), norm_state, t)
        t0 = time.perf_counter()
        try:
            if cfg.method == "ldc_single":
                W, x, diag = ldc_single_step(W, x, suite, bcfg, (stepper_x, stepper_w),
                                             norm_state, step=t)
            elif cfg.method == "ldc_double":
                W, x, diag = ldc_double_step(W, x, suite, bcfg, (stepper_x, stepper_w),
                                             norm_state, step=t)
            elif cfg.method == "ls":
                x, diag = ls_step(x, suite, cfg.ls_weights, stepper_x, norm_state, step=t)
            else:
                x, diag = mgda_step(x, suite, stepper_x, norm_state, step=t)
        except DivergenceError as err:
            err.state = (W, x)
            record(t, {}, W, x, 0.0, diverged=True)
            err.records = records
            raise
        wall = (time.perf_counter() - t0) * 1e6
        if (t + 1) % cfg.record_every == 0 or t + 1 == cfg.total_steps:
            record(t + 1, diag, W, x, wall)

    return records
