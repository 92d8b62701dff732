"""Evaluation quantities: average relative drop vs single-task baselines,
Pareto-stationarity residual, loss statistics, gradient cosine similarity,
and the inner/outer gradient-norm-ratio monitor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError
from .solvers import min_norm_weights

HIGHER_BETTER = "higher_better"
LOWER_BETTER = "lower_better"


@dataclass
class LossStats:
    mean: float
    std: float  # population std: the K tasks are the whole population
    min: float
    max: float


def delta_m(multi, single, directions) -> float:
    """Average signed relative change (percent) vs single-task baselines.

    directions holds one flag per metric column; negative output means the
    multi-task model beats the baselines on average.
    """
    m = np.asarray(multi, dtype=float)
    b = np.asarray(single, dtype=float)
    if m.shape != b.shape or m.ndim != 1:
        raise InvalidInputError("multi and single must be 1-d vectors of equal length")
    if len(directions) != m.size:
        raise InvalidInputError("one direction flag needed per metric column")
    if np.any(b == 0):
        raise InvalidInputError("single-task baseline entries must be nonzero")
    signs = np.array([-1.0 if d == HIGHER_BETTER else 1.0 for d in directions])
    for d in directions:
        if d not in (HIGHER_BETTER, LOWER_BETTER):
            raise InvalidInputError(f"unknown direction flag {d!r}")
    return float(np.mean(signs * (m - b) / b) * 100.0)


def pareto_residual(G) -> float:
    """min over simplex weights w of ||G^T w||^2."""
    _, residual = min_norm_weights(G)
    return residual


def loss_stats(losses) -> LossStats:
    l = np.asarray(losses, dtype=float)
    if l.ndim != 1 or l.size < 1:
        raise InvalidInputError("losses must be a nonempty vector")
    return LossStats(mean=float(l.mean()), std=float(l.std()),
                     min=float(l.min()), max=float(l.max()))


def grad_cosine_matrix(G, norm_floor: float = 1e-15) -> np.ndarray:
    """Pairwise cosine similarity of gradient rows; near-zero rows give 0."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    norms = np.linalg.norm(G, axis=1)
    ok = norms >= norm_floor
    safe = np.where(ok, norms, 1.0)
    C = (G / safe[:, None]) @ (G / safe[:, None]).T
    C[~ok, :] = 0.0
    C[:, ~ok] = 0.0
    np.fill_diagonal(C, np.where(ok, 1.0, 0.0))
    return np.clip(C, -1.0, 1.0)


def norm_ratio(grad_W_g_at_x, grad_W_g_at_zN) -> float:
    """Outer-to-inner gradient norm ratio; a monitored diagnostic only."""
    num = float(np.linalg.norm(grad_W_g_at_x))
    den = float(np.linalg.norm(grad_W_g_at_zN))
    return num / max(den, 1e-15)
