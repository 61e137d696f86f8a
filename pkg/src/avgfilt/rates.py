"""Predicted rate exponents, log-log slope fits and bootstrap confidence intervals."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats


class RegimeNotCovered(ValueError):
    """The parameters fall in a regime for which no exponent is predicted."""


@dataclass(frozen=True)
class DiagonalRateParams:
    """Spectral decay sigma_i ~ i^{-1-2 epsilon}, a_i ~ i^{-p}, data smoothness beta, norm index t."""

    epsilon: float
    p: float
    beta: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        if not (self.epsilon > 0 and self.p > 0 and self.beta >= 0 and self.t >= 0):
            raise ValueError("need epsilon > 0, p > 0, beta >= 0, t >= 0")

    @property
    def omega(self) -> float:
        """sigma_i ~ (sigma_i a_i^2)^omega."""
        e = 1 + 2 * self.epsilon
        return e / (e + 2 * self.p)

    def hilbert_scale(self) -> tuple[float, float]:
        """(nu, s) with nu (1 + 2 eps) = 2p and s (1 + 2 eps) = 2 beta."""
        e = 1 + 2 * self.epsilon
        return 2 * self.p / e, 2 * self.beta / e


def tau_bar_b(params: DiagonalRateParams) -> float:
    """Largest admissible bias index (t(1+2e) + 2 beta) / (2 (1 + 2e + 2p)); not clamped."""
    e = 1 + 2 * params.epsilon
    return (params.t * e + 2 * params.beta) / (2 * (e + 2 * params.p))


def tau_bar_v(params: DiagonalRateParams) -> float:
    """Supremum of admissible variance indices (t(1+2e) + 2e) / (1 + 2e + 2p); not clamped."""
    e = 1 + 2 * params.epsilon
    return (params.t * e + 2 * params.epsilon) / (e + 2 * params.p)


def effective_bias_rate(params: DiagonalRateParams) -> float:
    """Decay exponent of the squared bias, 2 min(tau_bar_b, 1)."""
    return 2 * min(tau_bar_b(params), 1.0)


def effective_var_rate(params: DiagonalRateParams) -> float:
    return min(tau_bar_v(params), 1.0)


def general_bias_exponent(nu: float, s: float, t: float) -> float:
    """Squared-bias exponent (s + t) / (1 + nu) of the non-diagonal bound."""
    return (s + t) / (1 + nu)


def batch_rate_exponent(params: DiagonalRateParams) -> tuple[float, bool]:
    """Minimax exponent of the spectral-cutoff batch estimator and the log-boundary flag."""
    e = 1 + 2 * params.epsilon
    expo = (params.t * e + 2 * params.beta) / (1 + 2 * params.p + 2 * params.beta)
    return expo, math.isclose(1 + 2 * params.p, params.t * e, rel_tol=1e-12, abs_tol=1e-12)


def kalman_minimax_exponent(params: DiagonalRateParams) -> float:
    """Reference t = 0 exponent 2 beta / (1 + 2 beta + 2p) for tuned Kalman."""
    return 2 * params.beta / (1 + 2 * params.beta + 2 * params.p)


def threedvar_minimax_exponent(params: DiagonalRateParams) -> float:
    """Reference t = 0 exponent of tuned, unaveraged 3DVAR (up to a log factor)."""
    return 2 * params.beta / (1 + 2 * params.beta + 2 * params.p + 2 * params.epsilon)


def minimax_regime(params: DiagonalRateParams) -> str:
    b, v = tau_bar_b(params), tau_bar_v(params)
    if b <= 1 and v <= 1:
        return "tuned"
    if b > 1 and v > 1:
        return "parametric"
    raise RegimeNotCovered("regime not covered: exactly one of tau_bar_b, tau_bar_v exceeds 1")


def _theta_denominator(params, theta):
    e = 1 + 2 * params.epsilon
    return 1 + 2 * params.p + 2 * params.beta + theta * (params.t * e + 2 * params.epsilon)


def averaged_minimax_exponent(params: DiagonalRateParams, theta: float) -> float:
    """MSE exponent of averaged 3DVAR with alpha tuned to n (1 in the parametric regime)."""
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    if minimax_regime(params) == "parametric":
        return 1.0
    e = 1 + 2 * params.epsilon
    return (params.t * e + 2 * params.beta) / _theta_denominator(params, theta)


def minimax_alpha(params: DiagonalRateParams, theta: float, n: int) -> float:
    """Tuned regularization for n averaged 3DVAR iterates (tau_bar_b, tau_bar_v <= 1)."""
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    if minimax_regime(params) != "tuned":
        raise RegimeNotCovered("alpha formula needs tau_bar_b, tau_bar_v <= 1")
    e = 1 + 2 * params.epsilon
    den = _theta_denominator(params, theta)
    n_expo = (2 * params.beta - 2 * params.epsilon + theta * (params.t * e + 2 * params.epsilon)) / den
    theta_expo = -(1 + 2 * params.p + 2 * params.epsilon) / den
    return theta**theta_expo * float(n) ** n_expo


@dataclass(frozen=True)
class RateReport:
    predicted_exponent: float
    fitted_slope: float
    fit_window: tuple[float, float]
    slope_stderr: float
    points: int = 0

    @property
    def deviation(self) -> float:
        return self.fitted_slope - self.predicted_exponent


def fit_slope(n, values, window=None, predicted: float = math.nan) -> RateReport:
    """Least-squares slope of log(value) against log(n) inside ``window``.

    ``window`` defaults to the last decade of ``n``; ``predicted`` is carried
    into the report as a slope (e.g. -0.25 for an n^{-1/4} decay).
    """
    n = np.asarray(n, dtype=float)
    values = np.asarray(values, dtype=float)
    if n.shape != values.shape or n.ndim != 1:
        raise ValueError("n and values must be 1-d arrays of equal length")
    if window is None:
        window = (n.max() / 10, n.max())
    lo, hi = window
    inside = (n >= lo * (1 - 1e-12)) & (n <= hi * (1 + 1e-12))
    if inside.sum() < 5:
        raise ValueError(f"need at least 5 points in window {window}, got {int(inside.sum())}")
    if np.any(~(values[inside] > 0)):
        raise ValueError("values must be positive inside the fit window")
    x, y = np.log(n[inside]), np.log(values[inside])
    res = stats.linregress(x, y)
    stderr = 0.0 if not np.isfinite(res.stderr) else float(res.stderr)
    return RateReport(float(predicted), float(res.slope), (float(lo), float(hi)), stderr, int(inside.sum()))


@dataclass(frozen=True)
class BootstrapCI:
    point: float
    lo: float
    hi: float
    level: float
    resamples: int


def bootstrap_means(samples, resamples: int = 10_000, seed: int = 0) -> np.ndarray:
    """Means of ``resamples`` with-replacement resamples along axis 0.

    ``samples`` of shape (m,) or (m, k); the same resampled index sets are
    used for every column, so curves are resampled trial-wise.
    """
    x = np.asarray(samples, dtype=float)
    if x.shape[0] < 1:
        raise ValueError("bootstrap needs at least one sample")
    m = x.shape[0]
    cols = x.reshape(m, -1)
    rng = np.random.default_rng(seed)
    out = np.empty((resamples, cols.shape[1]))
    chunk = max(1, (1 << 22) // (m * cols.shape[1]))
    for i in range(0, resamples, chunk):
        r = min(chunk, resamples - i)
        idx = rng.integers(0, m, size=(r, m))
        out[i:i + r] = cols[idx].mean(axis=1)
    return out.reshape((resamples,) + x.shape[1:])


def _percentile_ci(point, means, level):
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2], axis=0)
    # percentile bounds can miss the sample mean for tiny skewed samples
    return np.minimum(lo, point), np.maximum(hi, point)


def bootstrap_ci(samples, resamples: int = 10_000, level: float = 0.95, seed: int = 0) -> BootstrapCI:
    """Percentile bootstrap interval for the mean of 1-d ``samples``."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need a 1-d sample of size >= 2")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    point = float(x.mean())
    lo, hi = _percentile_ci(point, bootstrap_means(x, resamples, seed), level)
    return BootstrapCI(point, float(lo), float(hi), level, resamples)


def bootstrap_curve(samples, resamples: int = 10_000, level: float = 0.95, seed: int = 0):
    """Trial-mean curve with pointwise percentile CIs; ``samples`` has shape (trials, points)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a (trials >= 2, points) array")
    point = x.mean(axis=0)
    lo, hi = _percentile_ci(point, bootstrap_means(x, resamples, seed), level)
    return point, lo, hi


def bootstrap_upper_bound(samples, level: float = 0.95, resamples: int = 10_000, seed: int = 0) -> float:
    """One-sided upper percentile bound on the mean."""
    x = np.asarray(samples, dtype=float)
    return float(np.quantile(bootstrap_means(x, resamples, seed), level))


def bootstrap_lower_bound(samples, level: float = 0.95, resamples: int = 10_000, seed: int = 0) -> float:
    x = np.asarray(samples, dtype=float)
    return float(np.quantile(bootstrap_means(x, resamples, seed), 1 - level))
