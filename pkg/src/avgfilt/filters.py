"""3DVAR and Kalman recursions with running iterate averages.

States carry a leading batch axis when several Monte Carlo trials are advanced
together; the 3DVAR gain and the Kalman covariance do not depend on the data and
are shared by every trial.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import NumericalError
from .model import DenseOperator, EigenSequence, NoiseStream, OperatorRep, ProblemSpec, apply_forward, weighted_norm_sq

COND_MAX = 1e14
FILTERS = ("3dvar", "kalman")


@dataclass(frozen=True, eq=False)
class Gain:
    """Static 3DVAR gain ``K`` and its propagator ``I - K A``.

    Per-mode arrays for a diagonal operator, matrices for a dense one.
    """

    K: np.ndarray
    propagator: np.ndarray


@dataclass
class ThreeDVarState:
    u: np.ndarray
    u_bar: np.ndarray
    n: int = 0


@dataclass
class KalmanState:
    m: np.ndarray
    C: np.ndarray
    m_bar: np.ndarray
    n: int = 0


def threedvar_gain(spec: ProblemSpec, cond_max: float = COND_MAX) -> Gain:
    """K = (A*A + alpha Sigma^{-1})^{-1} A*.

    The dense form never inverts Sigma: K = Sigma^{1/2} (B*B + alpha I)^{-1} B*
    with B = A Sigma^{1/2}, solved by Cholesky.
    """
    op, alpha = spec.op, spec.alpha
    if isinstance(op, EigenSequence):
        denom = op.lam + alpha
        return Gain(op.sigma * op.a / denom, alpha / denom)
    s_half = op.sigma_power(0.5)
    B = op.A @ s_half
    M = B.T @ B + alpha * np.eye(op.dim)
    ev = np.linalg.eigvalsh(M)
    if ev[0] <= 0 or ev[-1] / ev[0] > cond_max:
        raise NumericalError(f"3DVAR gain system has condition number {ev[-1] / ev[0]:.3g}")
    K = s_half @ scipy.linalg.cho_solve(scipy.linalg.cho_factor(M), B.T)
    return Gain(K, np.eye(op.dim) - K @ op.A)


def _apply(op: OperatorRep, mat: np.ndarray, x: np.ndarray) -> np.ndarray:
    if isinstance(op, EigenSequence):
        return mat * x
    return x @ mat.T


def _check_dim(op: OperatorRep, x: np.ndarray, what: str):
    if np.shape(x)[-1] != op.dim:
        raise ValueError(f"{what} has dimension {np.shape(x)[-1]}, operator has {op.dim}")


def threedvar_init(spec: ProblemSpec, batch: int | None = None) -> ThreeDVarState:
    u = spec.u0.copy() if batch is None else np.tile(spec.u0, (batch, 1))
    return ThreeDVarState(u=u, u_bar=np.zeros_like(u), n=0)


def threedvar_step(state: ThreeDVarState, gain: Gain, y: np.ndarray, op: OperatorRep) -> ThreeDVarState:
    _check_dim(op, y, "observation")
    _check_dim(op, state.u, "state")
    n = state.n + 1
    u = _apply(op, gain.K, y) + _apply(op, gain.propagator, state.u)
    u_bar = u / n + ((n - 1) / n) * state.u_bar
    return ThreeDVarState(u, u_bar, n)


def initial_covariance(spec: ProblemSpec, C0=None):
    """Default prior covariance (gamma^2 / alpha) Sigma, or a user supplied one.

    For a diagonal operator ``C0`` is a per-mode variance (scalar or array).
    """
    op = spec.op
    if C0 is None:
        scale = spec.gamma**2 / spec.alpha
        C = scale * (op.sigma if isinstance(op, EigenSequence) else op.Sigma)
    elif isinstance(op, EigenSequence):
        C = np.broadcast_to(np.asarray(C0, dtype=float), (op.dim,)).copy()
    else:
        C = np.array(C0, dtype=float, ndmin=2)
    diag = C if C.ndim == 1 else np.diag(C)
    if np.any(~(diag > 0)):
        raise NumericalError("initial covariance must be positive")
    return C


def kalman_init(spec: ProblemSpec, C0=None, batch: int | None = None) -> KalmanState:
    m = spec.u0.copy() if batch is None else np.tile(spec.u0, (batch, 1))
    return KalmanState(m=m, C=initial_covariance(spec, C0), m_bar=np.zeros_like(m), n=0)


def kalman_gain(C: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """K_n = C_{n-1} A* (A C_{n-1} A* + gamma^2 I)^{-1}."""
    op, g2 = spec.op, spec.gamma**2
    if isinstance(op, EigenSequence):
        return C * op.a / (op.a**2 * C + g2)
    A = op.A
    S = A @ C @ A.T + g2 * np.eye(op.dim)
    # S symmetric and C symmetric: K^T = S^{-1} A C
    return scipy.linalg.solve(S, A @ C, assume_a="pos").T


def kalman_step(state: KalmanState, y: np.ndarray, spec: ProblemSpec) -> KalmanState:
    op = spec.op
    _check_dim(op, y, "observation")
    K = kalman_gain(state.C, spec)
    if isinstance(op, EigenSequence):
        # 1 - K a written without cancellation
        shrink = spec.gamma**2 / (op.a**2 * state.C + spec.gamma**2)
        m = K * y + shrink * state.m
        C = shrink * state.C
        bad = np.any(~(C > 0))
    else:
        P = np.eye(op.dim) - K @ op.A
        m = y @ K.T + state.m @ P.T
        C = P @ state.C
        C = 0.5 * (C + C.T)
        bad = np.any(~(np.diag(C) > 0))
    if bad:
        raise NumericalError(f"Kalman covariance lost positivity at step {state.n + 1}")
    n = state.n + 1
    m_bar = m / n + ((n - 1) / n) * state.m_bar
    return KalmanState(m, C, m_bar, n)


def kalman_precision_closed(spec: ProblemSpec, n: int, C0=None) -> np.ndarray:
    """C_n^{-1} = C_0^{-1} + n gamma^{-2} A*A."""
    C = initial_covariance(spec, C0)
    op = spec.op
    if isinstance(op, EigenSequence):
        return 1.0 / C + n * op.a**2 / spec.gamma**2
    return np.linalg.inv(C) + n * op.A.T @ op.A / spec.gamma**2


def geometric_grid(n_max: int, per_decade: int = 30, n_min: int = 1) -> np.ndarray:
    """Distinct integers spaced ~uniformly in log n on [n_min, n_max], n_max included."""
    if n_max < n_min or n_min < 1:
        raise ValueError("need 1 <= n_min <= n_max")
    lo, hi = np.log10(n_min), np.log10(n_max)
    count = int(np.ceil((hi - lo) * per_decade)) + 1
    grid = np.unique(np.round(np.logspace(lo, hi, count)).astype(np.int64))
    grid = grid[(grid >= n_min) & (grid <= n_max)]
    if grid[-1] != n_max:
        grid = np.append(grid, n_max)
    return grid


@dataclass
class Trajectory:
    """Squared t-norm errors at the recorded steps.

    ``plain`` holds ||u_n - u_truth||_t^2 and ``averaged`` holds ||u_bar_n - u_truth||_t^2
    (m_n and its average for Kalman); both have shape ``(trials, len(n))``,
    or ``(len(n),)`` when produced by :func:`run_filter`.
    """

    n: np.ndarray
    plain: np.ndarray
    averaged: np.ndarray


def _simulate(spec, streams, n_steps, which, record_at, ts, C0):
    op = spec.op
    batch = len(streams)
    record_at = np.asarray(record_at, dtype=np.int64)
    plain = np.empty((len(ts), batch, record_at.size))
    averaged = np.empty_like(plain)
    clean = apply_forward(op, spec.u_truth)
    noisy = spec.gamma != 0
    if which == "3dvar":
        gain = threedvar_gain(spec)
        state = threedvar_init(spec, batch)
    else:
        state = kalman_init(spec, C0, batch)
    block_steps = streams[0].block_steps
    slot = 0
    step = 0
    while step < n_steps and slot < record_at.size:
        b = step // block_steps
        if noisy:
            eta = np.stack([s.block(b) for s in streams], axis=1)  # (block, batch, dim)
        for r in range(min(block_steps, n_steps - step)):
            y = clean + spec.gamma * eta[r] if noisy else np.broadcast_to(clean, (batch, op.dim))
            if which == "3dvar":
                state = threedvar_step(state, gain, y, op)
                cur, avg = state.u, state.u_bar
            else:
                state = kalman_step(state, y, spec)
                cur, avg = state.m, state.m_bar
            step += 1
            if slot < record_at.size and step == record_at[slot]:
                for i, t in enumerate(ts):
                    plain[i, :, slot] = weighted_norm_sq(op, cur - spec.u_truth, t)
                    averaged[i, :, slot] = weighted_norm_sq(op, avg - spec.u_truth, t)
                slot += 1
    return plain, averaged


def _validate_run(spec, streams, n_steps, which, record_at):
    if which not in FILTERS:
        raise ValueError(f"unknown filter {which!r}; expected one of {FILTERS}")
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    if not streams:
        raise ValueError("at least one noise stream is required")
    for s in streams:
        if s.dimension != spec.dim:
            raise ValueError(f"stream dimension {s.dimension} != problem dimension {spec.dim}")
    record_at = geometric_grid(n_steps) if record_at is None else np.asarray(record_at, dtype=np.int64)
    if record_at.size == 0 or np.any(np.diff(record_at) <= 0) or record_at[0] < 1 or record_at[-1] > n_steps:
        raise ValueError("record_at must be strictly increasing within [1, n_steps]")
    return record_at


def run_trials(
    spec: ProblemSpec,
    streams: Sequence[NoiseStream],
    n_steps: int,
    which: str = "3dvar",
    record_at=None,
    ts: Sequence[float] | None = None,
    C0=None,
    threads: int = 1,
) -> dict[float, Trajectory]:
    """Run one filter per stream and record errors in every norm index of ``ts``.

    Trials are advanced together in batches; with ``threads > 1`` contiguous
    groups of streams run concurrently. Each trial only reads its own keyed
    stream, so the result does not depend on batching or scheduling.
    """
    record_at = _validate_run(spec, streams, n_steps, which, record_at)
    ts = [spec.t] if ts is None else [float(t) for t in ts]
    streams = list(streams)
    per_trial = streams[0].block_steps * spec.dim
    batch = max(1, (1 << 22) // per_trial)
    groups = [streams[i:i + batch] for i in range(0, len(streams), batch)]
    if threads > 1 and len(groups) < threads:
        size = -(-len(streams) // threads)
        groups = [streams[i:i + size] for i in range(0, len(streams), size)]

    def work(group):
        return _simulate(spec, group, n_steps, which, record_at, ts, C0)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, groups))
    else:
        parts = [work(g) for g in groups]
    plain = np.concatenate([p for p, _ in parts], axis=1)
    averaged = np.concatenate([a for _, a in parts], axis=1)
    return {t: Trajectory(record_at.copy(), plain[i], averaged[i]) for i, t in enumerate(ts)}


def run_filter(
    spec: ProblemSpec,
    stream: NoiseStream,
    n_steps: int,
    which: str = "3dvar",
    record_at=None,
    C0=None,
) -> Trajectory:
    """Single-trial run; errors measured in the norm index ``spec.t``."""
    traj = run_trials(spec, [stream], n_steps, which, record_at, C0=C0)[spec.t]
    return Trajectory(traj.n, traj.plain[0], traj.averaged[0])
