"""Deterministic numerical primitives shared by every other module.

All functions here are pure: softmax and its Jacobian, the smooth
absolute-value surrogate, Euclidean projection onto the probability
simplex, and a central-difference gradient oracle used by the
gradient-check harness.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

# Smoothing constant defaults: the tight value is used for training, the
# looser one keeps finite-difference checks well conditioned.
GAMMA_TRAIN = 1e-8
GAMMA_CHECK = 1e-4

SIMPLEX_SUM_TOL = 1e-9


class InvalidInputError(ValueError):
    """Raised when an operation receives non-finite or malformed input."""


class EvaluationError(RuntimeError):
    """Raised when a user-supplied function returns a non-finite value.

    Carries the coordinate index that triggered the failure (or -1 when
    the failure is not attributable to a single coordinate).
    """

    def __init__(self, message: str, coordinate: int = -1):
        super().__init__(message)
        self.coordinate = coordinate


def _as_finite_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise InvalidInputError(f"{name} must be a nonempty 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def softmax(logits) -> np.ndarray:
    """Softmax with max-subtraction so extreme logits cannot overflow."""
    z = _as_finite_vector(logits, "logits")
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_jacobian(logits) -> np.ndarray:
    """Jacobian of softmax: diag(s) - s s^T. Symmetric, rows sum to zero."""
    s = softmax(logits)
    return np.diag(s) - np.outer(s, s)


def soft_abs(d, gamma: float):
    """Smooth surrogate for |d|: sqrt(d^2 + gamma), floored at sqrt(gamma)."""
    if gamma <= 0:
        raise InvalidInputError("gamma must be positive")
    return np.sqrt(np.square(d) + gamma)


def soft_abs_grad(d, gamma: float):
    """Derivative of soft_abs: d / sqrt(d^2 + gamma), always in (-1, 1)."""
    if gamma <= 0:
        raise InvalidInputError("gamma must be positive")
    return d / np.sqrt(np.square(d) + gamma)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex.

    Sort-and-threshold algorithm: exact in O(K log K).
    """
    y = _as_finite_vector(v, "v")
    k = y.size
    u = np.sort(y)[::-1]
    css = np.cumsum(u)
    rho_candidates = u + (1.0 - css) / np.arange(1, k + 1) > 0
    rho = int(np.nonzero(rho_candidates)[0][-1])
    theta = (css[rho] - 1.0) / (rho + 1)
    return np.maximum(y - theta, 0.0)


def is_simplex_point(w, tol: float = SIMPLEX_SUM_TOL) -> bool:
    w = np.asarray(w, dtype=float)
    return bool(np.all(w >= 0) and abs(w.sum() - 1.0) <= tol)


def finite_diff_grad(fn: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function, coordinate by coordinate."""
    if h <= 0:
        raise InvalidInputError("h must be positive")
    x0 = _as_finite_vector(x, "x")
    grad = np.empty_like(x0)
    for i in range(x0.size):
        step = np.zeros_like(x0)
        step[i] = h
        fp = fn(x0 + step)
        fm = fn(x0 - step)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"non-finite function value perturbing coordinate {i}", coordinate=i)
        grad[i] = (fp - fm) / (2.0 * h)
    return grad
