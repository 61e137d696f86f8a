"""Rational filter functions r_{n,alpha} and q_{n,alpha} and their bounds.

    r_{n,alpha}(lam) = (alpha / (alpha + lam))**n
    q_{n,alpha}(lam) = (1 - r_{n,alpha}(lam)) / lam,   q_{n,alpha}(0) = n / alpha

Both are evaluated through ``log1p``/``expm1`` so that the tiny eigenvalues of
strongly smoothing operators (lam ~ 1e-29) do not cancel away.
All functions broadcast over numpy arrays in ``n`` and ``lam``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RegFilterParams:
    """Iteration count ``n`` and regularization ``alpha`` of r/q."""

    n: int
    alpha: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")


def _check_lambda(lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0) or np.any(np.isnan(lam)):
        raise ValueError("lambda must be nonnegative")
    return lam


def _log_ratio(n, alpha, lam):
    # n * log(alpha / (alpha + lam)), always <= 0
    return -np.asarray(n, dtype=float) * np.log1p(lam / alpha)


def r_values(n, alpha: float, lam):
    """Vectorized r_{n,alpha}(lam); ``n`` may be an integer array."""
    lam = _check_lambda(lam)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    out = np.exp(_log_ratio(n, alpha, lam))
    return out if out.ndim else float(out)


def q_values(n, alpha: float, lam):
    """Vectorized q_{n,alpha}(lam) with the continuous extension at 0."""
    lam = _check_lambda(lam)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    n_arr = np.asarray(n, dtype=float)
    lam_b, n_b = np.broadcast_arrays(lam, n_arr)
    out = np.empty(lam_b.shape)
    # divide by x = lam / alpha rather than lam: x may be subnormal or 0
    x = lam_b / alpha
    zero = x == 0
    out[zero] = n_b[zero] / alpha
    pos = ~zero
    xp = x[pos]
    out[pos] = -np.expm1(-n_b[pos] * np.log1p(xp)) / xp / alpha
    return out if out.ndim else float(out)


def eval_r(params: RegFilterParams, lam):
    return r_values(params.n, params.alpha, lam)


def eval_q(params: RegFilterParams, lam):
    return q_values(params.n, params.alpha, lam)


def r_bound(params: RegFilterParams, p: float, Lambda: float) -> float:
    """Upper bound of ``lam**p * r(lam)`` over ``lam`` in [0, Lambda]."""
    if p < 0 or not Lambda > 0:
        raise ValueError("need p >= 0 and Lambda > 0")
    n, alpha = params.n, params.alpha
    if p == 0:
        return 1.0
    # log form: keeps the p -> 0 limit (= 1) and avoids 0 * inf; huge bounds round to inf
    if p <= n:
        log_b = p * (np.log(alpha) + np.log(p) - np.log(n))
    else:
        log_b = n * np.log(alpha) + (p - n) * np.log(Lambda)
    with np.errstate(over="ignore"):
        return float(np.exp(log_b))


def q_bound(params: RegFilterParams, p: float, Lambda: float) -> float:
    """Upper bound of ``lam**p * q(lam)`` over ``lam`` in [0, Lambda]."""
    if p < 0 or not Lambda > 0:
        raise ValueError("need p >= 0 and Lambda > 0")
    if p <= 1:
        return (params.n / params.alpha) ** (1 - p)
    return Lambda ** (p - 1)
