"""Analytic multi-task objectives and loss-normalization schemes.

Three suite families:
  * ``toy2``        -- the 2-parameter, 2-task benchmark with tanh gates and
                       clamped log branches (subgradient 0 on clamped sides);
  * ``quad``        -- K quadratic bowls with SPD Hessians, a closed-form
                       weighted minimizer and (for K=2) an analytic front;
  * ``scaled``      -- any base suite with per-task positive rescaling.

Plus the two loss-normalization modes (``log`` and ``rescale``) applied to
the training losses consumed by the bilevel objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import InvalidInputError

TOY2_LOG_CLAMP = 0.000005

LOSS_FLOOR = 1e-12


@dataclass
class QuadSpec:
    """K quadratic tasks l_i(x) = 0.5 (x-a_i)^T A_i (x-a_i) + c_i."""

    matrices: np.ndarray  # (K, d, d), each SPD
    centers: np.ndarray   # (K, d)
    offsets: np.ndarray   # (K,), nonnegative


@dataclass
class TaskSuite:
    name: str
    num_tasks: int
    dim: int
    eval_losses: Callable[[np.ndarray], np.ndarray]
    eval_grads: Callable[[np.ndarray], np.ndarray]
    # Exact argmin of sum_i w_i l_i(x) for arbitrary nonnegative weights,
    # when a closed form exists (quadratic suites).
    lower_level_solution: Optional[Callable[[np.ndarray], np.ndarray]] = None
    quad: Optional[QuadSpec] = None
    # For 2-task quadratics: parameterization of the Pareto-optimal set,
    # t in [0, 1] -> parameter-space point.
    pareto_front_point: Optional[Callable[[float], np.ndarray]] = None


# ---------------------------------------------------------------------------
# Toy 2-task benchmark
# ---------------------------------------------------------------------------

def toy2_eval(x) -> tuple[np.ndarray, np.ndarray]:
    """Losses and analytic gradients of the 2-task toy benchmark.

    Both max(.) clamps are treated piecewise, with derivative 0 on the
    clamped branch.
    """
    x = np.asarray(x, dtype=float)
    x1, x2 = float(x[0]), float(x[1])

    th = np.tanh(x2)
    u1 = -0.5 * x1 - 3.5 + th
    u2 = -0.5 * x1 + 3.5 + th
    du = np.array([-0.5, 1.0 - th * th])  # same for u1 and u2

    a1 = max(abs(u1), TOY2_LOG_CLAMP)
    a2 = max(abs(u2), TOY2_LOG_CLAMP)
    f1 = np.log(a1) + 6.0
    f2 = np.log(a2) + 6.0
    df1 = du / u1 if abs(u1) >= TOY2_LOG_CLAMP else np.zeros(2)
    df2 = du / u2 if abs(u2) >= TOY2_LOG_CLAMP else np.zeros(2)

    g1 = ((x1 - 7.0) ** 2 + 0.1 * (x2 + 8.0) ** 2) / 10.0 - 20.0
    g2 = ((x1 + 7.0) ** 2 + 0.1 * (x2 + 8.0) ** 2) / 10.0 - 20.0
    dg1 = np.array([0.2 * (x1 - 7.0), 0.02 * (x2 + 8.0)])
    dg2 = np.array([0.2 * (x1 + 7.0), 0.02 * (x2 + 8.0)])

    th_half = np.tanh(0.5 * x2)
    c1 = max(th_half, 0.0)
    c2 = max(-th_half, 0.0)
    # Clamp derivatives pass at the exact boundary (tanh == 0), so the
    # origin is not an artificial dead point; strictly clamped sides get 0.
    sech2 = 1.0 - th_half * th_half
    dc1 = np.array([0.0, 0.5 * sech2]) if th_half >= 0 else np.zeros(2)
    dc2 = np.array([0.0, -0.5 * sech2]) if -th_half >= 0 else np.zeros(2)

    l1 = 0.1 * (c1 * f1 + c2 * g1)
    l2 = c1 * f2 + c2 * g2
    grad1 = 0.1 * (f1 * dc1 + c1 * df1 + g1 * dc2 + c2 * dg1)
    grad2 = f2 * dc1 + c1 * df2 + g2 * dc2 + c2 * dg2

    return np.array([l1, l2]), np.vstack([grad1, grad2])


def toy2_suite() -> TaskSuite:
    return TaskSuite(
        name="toy2",
        num_tasks=2,
        dim=2,
        eval_losses=lambda x: toy2_eval(x)[0],
        eval_grads=lambda x: toy2_eval(x)[1],
    )


# ---------------------------------------------------------------------------
# Quadratic suites
# ---------------------------------------------------------------------------

def quad_suite(matrices, centers, offsets=None, name: str = "quad") -> TaskSuite:
    """Build a quadratic suite from SPD Hessians, centers, and offsets."""
    A = np.asarray(matrices, dtype=float)
    a = np.asarray(centers, dtype=float)
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise InvalidInputError(f"matrices must have shape (K, d, d), got {A.shape}")
    K, d = A.shape[0], A.shape[1]
    if a.shape != (K, d):
        raise InvalidInputError(f"centers must have shape ({K}, {d}), got {a.shape}")
    c = np.zeros(K) if offsets is None else np.asarray(offsets, dtype=float)
    if c.shape != (K,):
        raise InvalidInputError(f"offsets must have shape ({K},), got {c.shape}")
    if np.any(c < 0):
        raise InvalidInputError("offsets must be nonnegative")
    for i in range(K):
        if not np.allclose(A[i], A[i].T, atol=1e-12):
            raise InvalidInputError(f"matrix {i} is not symmetric")
        if np.linalg.eigvalsh(A[i]).min() <= 0:
            raise InvalidInputError(f"matrix {i} is not positive definite")

    spec = QuadSpec(matrices=A, centers=a, offsets=c)

    def eval_losses(x):
        x = np.asarray(x, dtype=float)
        r = x[None, :] - a
        return 0.5 * np.einsum("ki,kij,kj->k", r, A, r) + c

    def eval_grads(x):
        x = np.asarray(x, dtype=float)
        r = x[None, :] - a
        return np.einsum("kij,kj->ki", A, r)

    def lower_level_solution(weights):
        w = np.asarray(weights, dtype=float)
        H = np.einsum("k,kij->ij", w, A)
        rhs = np.einsum("k,kij,kj->i", w, A, a)
        return np.linalg.solve(H, rhs)

    pareto_front_point = None
    if K == 2:
        def pareto_front_point(t: float) -> np.ndarray:
            return lower_level_solution(np.array([1.0 - t, t]))

    return TaskSuite(
        name=name,
        num_tasks=K,
        dim=d,
        eval_losses=eval_losses,
        eval_grads=eval_grads,
        lower_level_solution=lower_level_solution,
        quad=spec,
        pareto_front_point=pareto_front_point,
    )


def random_quad_suite(num_tasks: int, dim: int, rng: np.random.Generator,
                      cond: float = 5.0, name: str = "quad") -> TaskSuite:
    """Random SPD quadratic suite with eigenvalues in [1, cond]."""
    mats = np.empty((num_tasks, dim, dim))
    for i in range(num_tasks):
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        eig = rng.uniform(1.0, cond, size=dim)
        mats[i] = (q * eig) @ q.T
        mats[i] = 0.5 * (mats[i] + mats[i].T)
    centers = rng.uniform(-2.0, 2.0, size=(num_tasks, dim))
    return quad_suite(mats, centers, name=name)


def scaled_suite(base: TaskSuite, scales) -> TaskSuite:
    """Rescale each task's loss (and gradient row) by a positive factor."""
    s = np.asarray(scales, dtype=float)
    if s.shape != (base.num_tasks,) or np.any(s <= 0):
        raise InvalidInputError("scales must be positive with one entry per task")

    lower = None
    if base.lower_level_solution is not None:
        lower = lambda w: base.lower_level_solution(np.asarray(w, dtype=float) * s)

    quad = None
    if base.quad is not None:
        quad = QuadSpec(
            matrices=base.quad.matrices * s[:, None, None],
            centers=base.quad.centers,
            offsets=base.quad.offsets * s,
        )

    return TaskSuite(
        name=f"{base.name}-scaled",
        num_tasks=base.num_tasks,
        dim=base.dim,
        eval_losses=lambda x: base.eval_losses(x) * s,
        eval_grads=lambda x: base.eval_grads(x) * s[:, None],
        lower_level_solution=lower,
        quad=quad,
        pareto_front_point=base.pareto_front_point,
    )


# ---------------------------------------------------------------------------
# Loss normalization
# ---------------------------------------------------------------------------

NORMALIZATION_MODES = ("none", "log", "rescale")


@dataclass
class NormalizationState:
    """Frozen/refreshing per-task baselines for loss normalization.

    ``rescale`` freezes the baseline at step 0; ``log`` refreshes it every
    ``epoch_length`` steps. Baselines are clamped at ``floor`` so a loss of
    exactly zero never poisons a log.
    """

    mode: str = "none"
    baseline: np.ndarray = field(default_factory=lambda: np.ones(1))
    epoch_length: int = 50
    floor: float = LOSS_FLOOR

    def __post_init__(self):
        if self.mode not in NORMALIZATION_MODES:
            raise InvalidInputError(f"unknown normalization mode {self.mode!r}")
        if self.epoch_length < 1:
            raise InvalidInputError("epoch_length must be >= 1")
        self.baseline = np.asarray(self.baseline, dtype=float)


def fresh_normalization(mode: str, num_tasks: int, epoch_length: int = 50) -> NormalizationState:
    return NormalizationState(mode=mode, baseline=np.ones(num_tasks), epoch_length=epoch_length)


def capture_baseline(current_losses, state: NormalizationState, step: int) -> NormalizationState:
    """Refresh the baseline according to the mode's schedule."""
    if step < 0:
        raise InvalidInputError("step must be >= 0")
    losses = np.asarray(current_losses, dtype=float)
    if state.mode == "none":
        return state
    if state.mode == "rescale":
        if step != 0:
            return state
    elif step % state.epoch_length != 0:
        return state
    # Magnitude: suites whose losses dip below zero (the toy benchmark)
    # would otherwise flip gradient signs or explode against the floor.
    return replace(state, baseline=np.maximum(np.abs(losses), state.floor))


def normalize(raw_losses, raw_grads, state: NormalizationState):
    """Apply the configured normalization to losses and gradient rows."""
    l = np.asarray(raw_losses, dtype=float)
    G = np.asarray(raw_grads, dtype=float)
    if state.mode == "none":
        return l, G
    if state.mode == "rescale":
        return l / state.baseline, G / state.baseline[:, None]
    clamped = np.maximum(l, state.floor)
    return np.log(clamped / state.baseline), G / clamped[:, None]


def denormalize_losses(normalized_losses, state: NormalizationState) -> np.ndarray:
    """Inverse of the loss half of ``normalize`` (up to the floor clamp)."""
    ln = np.asarray(normalized_losses, dtype=float)
    if state.mode == "none":
        return ln
    if state.mode == "rescale":
        return ln * state.baseline
    return np.exp(ln) * state.baseline


_BUILDERS = {
    "toy2": toy2_suite,
}


def get_suite(name: str, **kwargs) -> TaskSuite:
    """Look up a named suite; quad suites need explicit parameters."""
    if name in _BUILDERS:
        return _BUILDERS[name]()
    if name == "quad":
        return quad_suite(**kwargs)
    raise InvalidInputError(f"unknown suite {name!r}")
