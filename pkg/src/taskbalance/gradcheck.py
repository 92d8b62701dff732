"""Finite-difference verification of every analytic gradient in the package.

Used both by the ``gradcheck`` CLI subcommand and by the acceptance suite.
Relative error is ||analytic - fd|| / max(||analytic|| + ||fd||, 1e-8).
"""

from __future__ import annotations

import numpy as np

from .core import GAMMA_CHECK, finite_diff_grad
from .objective import UpperLevelConfig, lower_value_and_grads, upper_value_and_grads
from .suites import (
    NormalizationState,
    TaskSuite,
    fresh_normalization,
    normalize,
    random_quad_suite,
    toy2_suite,
)

TOY2_BRANCH_MARGIN = 1e-3


def _rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - fd)
    scale = np.linalg.norm(analytic) + np.linalg.norm(fd)
    return float(diff / max(scale, 1e-8))


def toy2_point_is_safe(x, margin: float = TOY2_BRANCH_MARGIN) -> bool:
    """True when x is at least `margin` away from every clamp boundary."""
    x1, x2 = float(x[0]), float(x[1])
    u1 = -0.5 * x1 - 3.5 + np.tanh(x2)
    u2 = -0.5 * x1 + 3.5 + np.tanh(x2)
    if abs(abs(u1) - 0.000005) < margin or abs(abs(u2) - 0.000005) < margin:
        return False
    # both tanh gates clamp at x2 = 0
    return abs(np.tanh(0.5 * x2)) >= margin


def check_suite_gradients(suite: TaskSuite, rng: np.random.Generator,
                          points: int = 100, h: float = 1e-6,
                          box: float = 3.0, point_filter=None) -> float:
    """Max relative error of analytic gradient rows vs central differences."""
    worst = 0.0
    checked = 0
    while checked < points:
        x = rng.uniform(-box, box, size=suite.dim)
        if point_filter is not None and not point_filter(x):
            continue
        checked += 1
        G = suite.eval_grads(x)
        for i in range(suite.num_tasks):
            fd = finite_diff_grad(lambda v, i=i: float(suite.eval_losses(v)[i]), x, h)
            worst = max(worst, _rel_err(G[i], fd))
    return worst


def check_objective_gradients(suite: TaskSuite, rng: np.random.Generator,
                              points: int = 100, gamma: float = GAMMA_CHECK,
                              tau_mode: str = "sigma", norm_mode: str = "none",
                              h: float = 1e-6) -> dict[str, float]:
    """Max relative FD errors of the four bilevel partial gradients.

    Normalization baselines are frozen before differencing, matching how
    the training loops treat them within a step.
    """
    cfg = UpperLevelConfig(tau_mode=tau_mode, gamma=gamma)
    K = suite.num_tasks

    if norm_mode == "none":
        state = fresh_normalization("none", K)
    else:
        baseline = np.maximum(suite.eval_losses(rng.uniform(-3, 3, size=suite.dim)), 1e-6)
        state = NormalizationState(mode=norm_mode, baseline=baseline)

    def norm_at(x):
        return normalize(suite.eval_losses(x), suite.eval_grads(x), state)

    def g_of_x(x, W):
        losses, grads = norm_at(x)
        return lower_value_and_grads(W, losses, grads)[0]

    def f_of_x(x, W):
        losses, grads = norm_at(x)
        return upper_value_and_grads(W, losses, grads, cfg)[0]

    worst = {"grad_x_g": 0.0, "grad_W_g": 0.0, "grad_x_f": 0.0, "grad_W_f": 0.0}
    for _ in range(points):
        x = rng.uniform(-3.0, 3.0, size=suite.dim)
        W = rng.uniform(-3.0, 3.0, size=K)
        losses, grads = norm_at(x)
        _, gxg, gWg = lower_value_and_grads(W, losses, grads)
        _, gxf, gWf = upper_value_and_grads(W, losses, grads, cfg)

        worst["grad_x_g"] = max(worst["grad_x_g"], _rel_err(
            gxg, finite_diff_grad(lambda v: g_of_x(v, W), x, h)))
        worst["grad_W_g"] = max(worst["grad_W_g"], _rel_err(
            gWg, finite_diff_grad(lambda v: g_of_x(x, v), W, h)))
        worst["grad_x_f"] = max(worst["grad_x_f"], _rel_err(
            gxf, finite_diff_grad(lambda v: f_of_x(v, W), x, h)))
        worst["grad_W_f"] = max(worst["grad_W_f"], _rel_err(
            gWf, finite_diff_grad(lambda v: f_of_x(x, v), W, h)))
    return worst


def full_gradient_report(seed: int = 0, points: int = 100,
                         task_counts=(2, 3, 11)) -> dict[str, float]:
    """All gradient-check targets; returns target -> max relative error."""
    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}

    report["toy2/suite"] = check_suite_gradients(
        toy2_suite(), rng, points=points, box=10.0, point_filter=toy2_point_is_safe,
        h=1e-7)

    for K in task_counts:
        suite = random_quad_suite(K, 4, rng)
        report[f"quad-k{K}/suite"] = check_suite_gradients(suite, rng, points=points)
        for tau_mode in ("ones", "sigma"):
            errs = check_objective_gradients(
                suite, rng, points=points, tau_mode=tau_mode)
            for target, err in errs.items():
                report[f"quad-k{K}/tau={tau_mode}/{target}"] = err
    return report
