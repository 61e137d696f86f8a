"""Closed-form bias and variance of the filters and of the batch spectral-cutoff estimator.

These are the reference values that the simulations are checked against.
Everything here is exact for the finite truncation; nothing is asymptotic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .filters import COND_MAX, threedvar_gain
from .model import DenseOperator, EigenSequence, ProblemSpec, weighted_norm_sq
from .spectral import q_values, r_values

DENSE_MAX_DIM = 64


@dataclass(frozen=True)
class BiasVarReport:
    n: int
    bias_sq: float
    var: float
    mse: float

    @classmethod
    def of(cls, n, bias_sq, var):
        return cls(int(n), float(bias_sq), float(var), float(bias_sq + var))


def _require_diagonal(spec: ProblemSpec) -> EigenSequence:
    if not isinstance(spec.op, EigenSequence):
        raise TypeError("this closed form needs a diagonal (EigenSequence) operator")
    return spec.op


def _as_steps(n):
    arr = np.asarray(n, dtype=np.int64)
    if np.any(arr < 1):
        raise ValueError("n must be >= 1")
    return arr


def bias_sq_closed(spec: ProblemSpec, n):
    """||u_bar_n - u_truth||_t^2 with zero noise, diagonal operator.

    sum_i sigma_i^t [(alpha/n) q_{n,alpha}(sigma_i a_i^2)]^2 v0_i^2.
    ``n`` may be an array of step counts.
    """
    op = _require_diagonal(spec)
    ns = _as_steps(n)
    alpha = spec.alpha
    w = op.sigma**spec.t * spec.v0**2
    flat = ns.ravel()
    out = np.empty(flat.size)
    chunk = max(1, (1 << 20) // op.dim)
    for i in range(0, flat.size, chunk):
        nn = flat[i:i + chunk, None]
        damp = alpha / nn * q_values(nn, alpha, op.lam[None, :])
        out[i:i + chunk] = (damp**2) @ w
    out = out.reshape(ns.shape)
    return out if out.ndim else float(out)


def var_closed(spec: ProblemSpec, n):
    """E||u_bar_n - E u_bar_n||_t^2 for averaged 3DVAR, diagonal operator.

    (gamma^2 / n^2) sum_{j<=n} sum_i sigma_i^{t+2} a_i^2 q_{j,alpha}(sigma_i a_i^2)^2,
    accumulated over j once up to max(n), so a whole curve costs O(max(n) N).
    """
    op = _require_diagonal(spec)
    ns = _as_steps(n)
    flat = ns.ravel()
    n_max = int(flat.max())
    w = op.sigma ** (spec.t + 2) * op.a**2
    inner = np.empty(n_max)
    chunk = max(1, (1 << 20) // op.dim)
    for j0 in range(1, n_max + 1, chunk):
        jj = np.arange(j0, min(j0 + chunk, n_max + 1))[:, None]
        inner[j0 - 1:j0 - 1 + jj.shape[0]] = q_values(jj, spec.alpha, op.lam[None, :]) ** 2 @ w
    cum = np.cumsum(inner)
    out = (spec.gamma**2 * cum[flat - 1] / flat.astype(float) ** 2).reshape(ns.shape)
    return out if out.ndim else float(out)


def plain_bias_sq_closed(spec: ProblemSpec, n):
    """Squared t-norm bias of the unaveraged 3DVAR iterate: sum sigma^t r_n^2 v0^2."""
    op = _require_diagonal(spec)
    ns = _as_steps(n)
    r = r_values(ns.ravel()[:, None], spec.alpha, op.lam[None, :])
    out = ((r * r) @ (op.sigma**spec.t * spec.v0**2)).reshape(ns.shape)
    return out if out.ndim else float(out)


def plain_var_closed(spec: ProblemSpec, n):
    """Variance of the unaveraged 3DVAR iterate.

    gamma^2 sum_i sigma_i^t K_i^2 (1 - rho_i^{2n}) / (1 - rho_i^2), rho = alpha/(alpha+lam).
    """
    op = _require_diagonal(spec)
    ns = _as_steps(n)
    K = threedvar_gain(spec).K
    lam, alpha = op.lam, spec.alpha
    # 1 - rho^2 = lam (2 alpha + lam) / (alpha + lam)^2
    one_minus_rho2 = lam * (2 * alpha + lam) / (alpha + lam) ** 2
    geom = -np.expm1(-2 * ns.ravel()[:, None] * np.log1p(lam / alpha)[None, :]) / one_minus_rho2
    out = (spec.gamma**2 * geom @ (op.sigma**spec.t * K**2)).reshape(ns.shape)
    return out if out.ndim else float(out)


def _dense_factors(spec: ProblemSpec, max_dim: int):
    op = spec.op
    if not isinstance(op, DenseOperator):
        raise TypeError("dense closed forms need a DenseOperator")
    if op.dim > max_dim:
        raise ValueError(f"dense closed forms are limited to dimension {max_dim}")
    s_half = op.sigma_power(0.5)
    B = op.A @ s_half
    lam, V = np.linalg.eigh(B.T @ B)
    lam = np.maximum(lam, 0.0)
    if (lam[-1] + spec.alpha) / spec.alpha > COND_MAX:
        raise NumericalError("B*B + alpha I exceeds the conditioning guard")
    return op, s_half, B, lam, V


def dense_bias_sq_closed(spec: ProblemSpec, n: int, max_dim: int = DENSE_MAX_DIM) -> float:
    """||(alpha/n) Sigma^{1/2} V q_n(Lambda) V* Sigma^{-1/2} v0||_t^2 with B*B = V Lambda V*."""
    n = int(_as_steps(n))
    op, s_half, _, lam, V = _dense_factors(spec, max_dim)
    z = V.T @ (op.sigma_power(-0.5) @ spec.v0)
    err = (spec.alpha / n) * (s_half @ (V @ (q_values(n, spec.alpha, lam) * z)))
    return weighted_norm_sq(op, err, spec.t)


def dense_var_closed(spec: ProblemSpec, n: int, max_dim: int = DENSE_MAX_DIM) -> float:
    """(gamma^2/n^2) sum_j ||Sigma^{t/2} Sigma^{1/2} V q_j(Lambda) V* B*||_F^2."""
    n = int(_as_steps(n))
    op, s_half, B, lam, V = _dense_factors(spec, max_dim)
    L = op.sigma_power(spec.t / 2) @ s_half @ V  # (d, d)
    R = V.T @ B.T
    total = 0.0
    for j in range(1, n + 1):
        M = (L * q_values(j, spec.alpha, lam)) @ R
        total += float(np.sum(M * M))
    return spec.gamma**2 * total / n**2


def _scalar_params(spec: ProblemSpec):
    op = _require_diagonal(spec)
    if op.dim != 1:
        raise ValueError("Kalman closed forms are scalar only")
    return float(op.a[0]), float(op.sigma[0]), spec.alpha, spec.gamma, float(spec.v0[0])


def kalman_closed(spec: ProblemSpec, n: int, averaged: bool = False) -> BiasVarReport:
    """Bias and variance of the scalar Kalman mean with C0 = gamma^2 Sigma / alpha.

    With c_k = (A + alpha / (A Sigma k))^{-1} the mean is
    m_k = E m_k + c_k * eta_bar_k, eta_bar_k the running mean of the noise, so

        Var(m_n)     = c_n^2 gamma^2 / n
        Var(m_bar_n) = (gamma^2 / n^2) sum_j (sum_{k=j..n} c_k / k)^2

    The inner sums are suffix sums, so the cost is O(n). ``bias_sq`` is the
    squared bias; its square root is |E m - u_truth|.
    """
    n = int(_as_steps(n))
    A, S, alpha, gamma, v0 = _scalar_params(spec)
    if not averaged:
        bias = v0 / (1 + A * A * S * n / alpha)
        var = gamma**2 / (n * (A + alpha / (A * S * n)) ** 2)
        return BiasVarReport.of(n, bias * bias, var)
    k = np.arange(1, n + 1, dtype=float)
    shrink = 1.0 / (1 + A * A * S * k / alpha)
    bias = v0 * shrink.mean()
    c = 1.0 / (A + alpha / (A * S * k))
    suffix = np.cumsum((c / k)[::-1])[::-1]
    var = gamma**2 * float(np.sum(suffix**2)) / n**2
    return BiasVarReport.of(n, bias * bias, var)


def kalman_closed_curve(spec: ProblemSpec, n_max: int):
    """Kalman bias^2 and variance for every n = 1..n_max, with and without averaging.

    Returns a dict of arrays ``bias_sq``, ``var``, ``avg_bias_sq``, ``avg_var``.
    The averaged variance uses the O(1) update of
    T_n = sum_j (sum_{k=j..n} d_k)^2 with d_k = c_k / k:
    T_n = T_{n-1} + 2 d_n U_{n-1} + n d_n^2, U_n = U_{n-1} + n d_n.
    """
    A, S, alpha, gamma, v0 = _scalar_params(spec)
    k = np.arange(1, n_max + 1, dtype=float)
    shrink = 1.0 / (1 + A * A * S * k / alpha)
    c = 1.0 / (A + alpha / (A * S * k))
    d = c / k
    T = np.empty(n_max)
    t_prev = u_prev = 0.0
    for i in range(n_max):
        nn = i + 1
        t_prev = t_prev + 2 * d[i] * u_prev + nn * d[i] ** 2
        u_prev = u_prev + nn * d[i]
        T[i] = t_prev
    return {
        "n": k.astype(np.int64),
        "bias_sq": (v0 * shrink) ** 2,
        "var": gamma**2 * c**2 / k,
        "avg_bias_sq": (v0 * np.cumsum(shrink) / k) ** 2,
        "avg_var": gamma**2 * T / k**2,
    }


def kalman_avg_var_as_printed(spec: ProblemSpec, n: int) -> float:
    """Averaged Kalman variance with the running noise mean replaced by the running sum.

    (gamma^2/n^2) sum_j (sum_{k=j..n} c_k)^2. Kept for comparison only: it is
    not the variance of m_bar_n, and it grows like n for large n.
    """
    A, S, alpha, gamma, _ = _scalar_params(spec)
    k = np.arange(1, int(n) + 1, dtype=float)
    c = 1.0 / (A + alpha / (A * S * k))
    suffix = np.cumsum(c[::-1])[::-1]
    return gamma**2 * float(np.sum(suffix**2)) / n**2


def batch_cutoff_estimate(spec: ProblemSpec, ybar, n: int = 1, alpha_cut: float | None = None):
    """Spectral cutoff g(A*A) A* ybar: mode i is ybar_i / a_i when a_i^2 >= alpha_cut, else 0.

    ``alpha_cut`` defaults to ``spec.alpha``; ``n`` (the number of averaged
    observations) does not enter the estimate itself.
    """
    op = _require_diagonal(spec)
    cut = spec.alpha if alpha_cut is None else alpha_cut
    ybar = np.asarray(ybar, dtype=float)
    keep = op.a**2 >= cut
    return np.where(keep, ybar / op.a, 0.0)


def batch_risk_closed(spec: ProblemSpec, n: int, alpha_cut: float) -> BiasVarReport:
    """Exact t-norm risk of the cutoff estimator from the mean of n observations.

    bias^2 = sum_{a_i^2 < cut} sigma_i^t u_i^2, var = (gamma^2/n) sum_{a_i^2 >= cut} sigma_i^t / a_i^2.
    """
    op = _require_diagonal(spec)
    keep = op.a**2 >= alpha_cut
    st = op.sigma**spec.t
    bias_sq = float(np.sum(st[~keep] * spec.u_truth[~keep] ** 2))
    var = spec.gamma**2 / n * float(np.sum(st[keep] / op.a[keep] ** 2))
    return BiasVarReport.of(n, bias_sq, var)


def batch_optimal_risk(spec: ProblemSpec, n: int):
    """Minimal cutoff risk over every distinct cutoff level, and the level attaining it.

    The risk only changes when the cutoff crosses some a_i^2, so scanning the
    candidate levels {a_i^2} plus "keep nothing" is an exact minimization.
    Returns ``(BiasVarReport, alpha_cut)``.
    """
    op = _require_diagonal(spec)
    a2 = op.a**2
    order = np.argsort(-a2, kind="stable")
    st = op.sigma**spec.t
    b_terms = (st * spec.u_truth**2)[order]
    v_terms = (st / a2)[order]
    # keeping the first K modes in descending a^2 order, K = 0..N
    bias = np.concatenate([np.cumsum(b_terms[::-1])[::-1], [0.0]])
    var = spec.gamma**2 / n * np.concatenate([[0.0], np.cumsum(v_terms)])
    sorted_a2 = a2[order]
    # ties in a^2 are kept together, so only cut after the last of a tie group
    valid = np.ones(op.dim + 1, dtype=bool)
    valid[1:-1] = sorted_a2[1:] < sorted_a2[:-1]
    risk = np.where(valid, bias + var, np.inf)
    K = int(np.argmin(risk))
    cut = float(sorted_a2[K - 1]) if K > 0 else float(sorted_a2[0]) * 2.0
    return BiasVarReport.of(n, bias[K], var[K]), cut
