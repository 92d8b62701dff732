"""Upper-level gap objective, lower-level weighted loss, penalty, and the
four analytic partial gradients the training loops consume.

Conventions: ``W`` is a bare logits vector of length K; the task weights are
``sigma = softmax(W)``. Losses and gradient rows passed in are assumed
already normalized by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    GAMMA_TRAIN,
    InvalidInputError,
    soft_abs,
    soft_abs_grad,
    softmax,
    softmax_jacobian,
)
from .suites import NormalizationState, TaskSuite, normalize

TAU_MODES = ("ones", "sigma")


class ConfigurationError(ValueError):
    """Raised when an operation cannot run under the given configuration."""


@dataclass
class UpperLevelConfig:
    """Options for the gap objective: tau weighting, smoothing, task order."""

    tau_mode: str = "ones"
    gamma: float = GAMMA_TRAIN
    task_order: Optional[np.ndarray] = None  # permutation of 0..K-1

    def __post_init__(self):
        if self.tau_mode not in TAU_MODES:
            raise InvalidInputError(f"unknown tau_mode {self.tau_mode!r}")
        if self.gamma <= 0:
            raise InvalidInputError("gamma must be positive")
        if self.task_order is not None:
            order = np.asarray(self.task_order, dtype=int)
            if sorted(order.tolist()) != list(range(order.size)):
                raise InvalidInputError("task_order must be a permutation")
            self.task_order = order

    def order_for(self, num_tasks: int) -> np.ndarray:
        if self.task_order is None:
            return np.arange(num_tasks)
        if self.task_order.size != num_tasks:
            raise InvalidInputError("task_order length does not match task count")
        return self.task_order


@dataclass
class BilevelConfig:
    """Hyperparameters of the penalized bilevel method."""

    lam: float = 0.1          # penalty constant
    alpha: float = 1e-3       # outer step size
    beta: float = 1e-3        # inner step size
    n_inner: int = 50         # inner iterations per outer step
    upper: UpperLevelConfig = field(default_factory=UpperLevelConfig)
    norm_mode: str = "none"
    # The inner update admits two readings: step beta (default) or
    # beta * lambda. Both are supported; see inner loop.
    inner_beta_times_lambda: bool = False

    def __post_init__(self):
        if self.lam <= 0:
            raise InvalidInputError("lambda must be positive")
        if self.alpha <= 0:
            raise InvalidInputError("alpha must be positive")
        if self.beta <= 0:
            raise InvalidInputError("beta must be positive")
        if self.n_inner < 1:
            raise InvalidInputError("n_inner must be >= 1")

    @property
    def beta_eff(self) -> float:
        return self.beta * self.lam if self.inner_beta_times_lambda else self.beta


def lower_value_and_grads(logits, losses, grads):
    """Weighted-sum objective g = sigma^T l and its partials.

    Returns (g, grad_x_g, grad_W_g) with grad_x_g = G^T sigma and
    grad_W_g = J_sigma^T l.
    """
    l = np.asarray(losses, dtype=float)
    G = np.asarray(grads, dtype=float)
    if G.shape[0] != l.size:
        raise InvalidInputError(f"gradient rows ({G.shape[0]}) != losses ({l.size})")
    sigma = softmax(logits)
    if sigma.size != l.size:
        raise InvalidInputError(f"logits length ({sigma.size}) != losses ({l.size})")
    g = float(sigma @ l)
    grad_x_g = G.T @ sigma
    grad_W_g = softmax_jacobian(logits).T @ l
    return g, grad_x_g, grad_W_g


def upper_value_and_grads(logits, losses, grads, cfg: UpperLevelConfig):
    """Smoothed adjacent-gap objective f and its partials.

    f = sum_i sqrt(d_i^2 + gamma) with d_i = tau_i l_{pi(i)} - tau_{i+1} l_{pi(i+1)}.
    Under tau_mode="ones" f does not depend on W; under "sigma" the tau
    factors are softmax weights and the chain rule through W is included.
    """
    l = np.asarray(losses, dtype=float)
    G = np.asarray(grads, dtype=float)
    K = l.size
    if K < 2:
        raise InvalidInputError("gap objective needs at least 2 tasks")
    if G.shape[0] != K:
        raise InvalidInputError(f"gradient rows ({G.shape[0]}) != losses ({K})")

    order = cfg.order_for(K)
    sigma = softmax(logits)
    tau = sigma[order] if cfg.tau_mode == "sigma" else np.ones(K)
    lp = l[order]
    Gp = G[order]

    weighted = tau * lp
    gaps = weighted[:-1] - weighted[1:]
    f = float(np.sum(soft_abs(gaps, cfg.gamma)))
    sprime = soft_abs_grad(gaps, cfg.gamma)

    # d f / d lp_j: +tau_j s'(d_{j}) from the gap starting at j,
    # -tau_j s'(d_{j-1}) from the gap ending at j.
    coeff = np.zeros(K)
    coeff[:-1] += sprime
    coeff[1:] -= sprime
    grad_x_f = (coeff * tau) @ Gp

    if cfg.tau_mode == "ones":
        grad_W_f = np.zeros(K)
    else:
        # d f / d sigma_{pi(j)} = coeff_j * lp_j, mapped back to task order.
        dsigma = np.zeros(K)
        dsigma[order] = coeff * lp
        grad_W_f = softmax_jacobian(logits).T @ dsigma
    return f, grad_x_f, grad_W_f


def solve_lower_level(logits, suite: TaskSuite, norm_state: NormalizationState,
                      inner_solver=None) -> np.ndarray:
    """Minimizer of g(W, .) under the given normalization.

    Uses the suite's closed form when available (exactly for mode "none";
    for "rescale" via effective weights sigma_i / baseline_i). The log mode
    changes the minimizer, so a closed form is never valid there; callers
    must supply an inner-loop solver instead.
    """
    sigma = softmax(logits)
    if norm_state.mode != "log" and suite.lower_level_solution is not None:
        weights = sigma if norm_state.mode == "none" else sigma / norm_state.baseline
        return suite.lower_level_solution(weights)
    if inner_solver is not None:
        return inner_solver(logits)
    raise ConfigurationError(
        "suite has no exact lower-level solution under this normalization "
        "and no inner-loop solver was supplied"
    )


def penalty_value(logits, x, suite: TaskSuite, norm_state: NormalizationState,
                  inner_solver=None) -> float:
    """Penalty p(W, x) = g(W, x) - g(W, x*), nonnegative when x* is exact."""
    xstar = solve_lower_level(logits, suite, norm_state, inner_solver)
    sigma = softmax(logits)
    l_x, _ = normalize(suite.eval_losses(x), suite.eval_grads(x), norm_state)
    l_s, _ = normalize(suite.eval_losses(xstar), suite.eval_grads(xstar), norm_state)
    return float(sigma @ l_x - sigma @ l_s)


def penalized_gradient(logits, x, suite: TaskSuite, cfg: BilevelConfig,
                       norm_state: NormalizationState, inner_solver=None):
    """Full gradient of f + lam * p at (W, x).

    Returns (grad_W, grad_x). The x* used for the correction term comes
    from the closed form when available; grad_x g(W, x*) = 0 there, so the
    x block is simply grad_x f + lam * grad_x g(W, x).
    """
    losses, grads = normalize(suite.eval_losses(x), suite.eval_grads(x), norm_state)
    _, grad_x_g, grad_W_g = lower_value_and_grads(logits, losses, grads)
    _, grad_x_f, grad_W_f = upper_value_and_grads(logits, losses, grads, cfg.upper)

    xstar = solve_lower_level(logits, suite, norm_state, inner_solver)
    l_s, G_s = normalize(suite.eval_losses(xstar), suite.eval_grads(xstar), norm_state)
    _, _, grad_W_g_star = lower_value_and_grads(logits, l_s, G_s)

    grad_W = grad_W_f + cfg.lam * (grad_W_g - grad_W_g_star)
    grad_x = grad_x_f + cfg.lam * grad_x_g
    return grad_W, grad_x


def stationarity_residual(logits, x, suite: TaskSuite, cfg: BilevelConfig,
                          norm_state: Optional[NormalizationState] = None,
                          inner_solver=None) -> float:
    """Squared norm of the concatenated penalized-objective gradient."""
    if norm_state is None:
        norm_state = NormalizationState(mode="none", baseline=np.ones(suite.num_tasks))
    grad_W, grad_x = penalized_gradient(logits, x, suite, cfg, norm_state, inner_solver)
    return float(grad_W @ grad_W + grad_x @ grad_x)
