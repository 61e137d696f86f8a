"""Inverse-problem instances y = A u + eta in diagonal or dense form.

A problem lives either on a shared eigenbasis of Sigma and A*A
(:class:`EigenSequence`) or as a small pair of dense matrices
(:class:`DenseOperator`). Vectors are coefficient arrays whose last axis is the
mode/state axis; leading axes are treated as a batch (e.g. Monte Carlo trials).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

# Relative floor for Sigma eigenvalues before fractional powers.
EIG_FLOOR = 1e-14
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class EigenSequence:
    """Eigenvalues sigma_i of Sigma and a_i of A on a shared basis."""

    sigma: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float, ndmin=1)
        a = np.array(self.a, dtype=float, ndmin=1)
        if sigma.ndim != 1 or sigma.shape != a.shape or sigma.size < 1:
            raise ValueError("sigma and a must be 1-d arrays of equal nonzero length")
        if np.any(~(sigma > 0)) or np.any(~(a > 0)):
            raise ValueError("all sigma_i and a_i must be positive")
        sigma.flags.writeable = False
        a.flags.writeable = False
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "a", a)

    @property
    def N(self) -> int:
        return self.sigma.size

    @property
    def dim(self) -> int:
        return self.sigma.size

    @property
    def lam(self) -> np.ndarray:
        """Eigenvalues sigma_i * a_i**2 of B*B, B = A Sigma^{1/2}."""
        return self.sigma * self.a**2


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Dense forward matrix ``A`` and symmetric positive-definite ``Sigma``."""

    A: np.ndarray
    Sigma: np.ndarray
    _evals: np.ndarray = field(init=False, repr=False)
    _evecs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        S = np.array(self.Sigma, dtype=float, ndmin=2)
        d = S.shape[0]
        if S.shape != (d, d) or A.shape != (d, d):
            raise ValueError("A and Sigma must be square matrices of equal size")
        if np.max(np.abs(S - S.T)) > SYMMETRY_TOL:
            raise ValueError("Sigma is not symmetric")
        evals, evecs = np.linalg.eigh(0.5 * (S + S.T))
        if np.any(evals <= 0):
            raise ValueError("Sigma is not positive definite")
        evals = np.maximum(evals, EIG_FLOOR * evals.max())
        for name, val in (("A", A), ("Sigma", S), ("_evals", evals), ("_evecs", evecs)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @property
    def dim(self) -> int:
        return self.Sigma.shape[0]

    def sigma_power(self, power: float) -> np.ndarray:
        """Sigma**power through the (floored) symmetric eigendecomposition."""
        Q = self._evecs
        return (Q * self._evals**power) @ Q.T

    @classmethod
    def from_eigen(cls, eig: EigenSequence) -> "DenseOperator":
        return cls(np.diag(eig.a), np.diag(eig.sigma))


OperatorRep = Union[EigenSequence, DenseOperator]


def apply_forward(op: OperatorRep, x: np.ndarray) -> np.ndarray:
    """A x along the last axis."""
    if isinstance(op, EigenSequence):
        return op.a * x
    return x @ op.A.T


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """One inverse problem with its filter settings.

    ``u0`` is the 3DVAR starting iterate and the Kalman starting mean;
    the static/prior covariance is ``(gamma**2 / alpha) * Sigma``.
    """

    op: OperatorRep
    u_truth: np.ndarray
    u0: np.ndarray
    gamma: float
    alpha: float
    t: float = 0.0

    def __post_init__(self):
        d = self.op.dim
        ut = np.array(self.u_truth, dtype=float, ndmin=1)
        u0 = np.array(self.u0, dtype=float, ndmin=1)
        if ut.shape != (d,) or u0.shape != (d,):
            raise ValueError(f"u_truth and u0 must have length {d}")
        if not self.gamma >= 0:
            raise ValueError("gamma must be nonnegative")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.t >= 0:
            raise ValueError("t must be nonnegative")
        ut.flags.writeable = False
        u0.flags.writeable = False
        object.__setattr__(self, "u_truth", ut)
        object.__setattr__(self, "u0", u0)

    @property
    def dim(self) -> int:
        return self.op.dim

    @property
    def v0(self) -> np.ndarray:
        """Initial error u0 - u_truth."""
        return self.u0 - self.u_truth

    def replace(self, **changes) -> "ProblemSpec":
        fields = dict(op=self.op, u_truth=self.u_truth, u0=self.u0,
                      gamma=self.gamma, alpha=self.alpha, t=self.t)
        fields.update(changes)
        return ProblemSpec(**fields)


def scalar_problem(A=1.0, Sigma=1.0, u_truth=0.5, u0=0.0, gamma=0.1, alpha=1.0, t=0.0):
    """Dimension-one problem; defaults are the scalar experiment's 3DVAR setup."""
    return ProblemSpec(EigenSequence([Sigma], [A]), [u_truth], [u0], gamma, alpha, t)


@dataclass(frozen=True)
class SobolevICParams:
    beta: float
    delta: float
    N: int

    def __post_init__(self):
        if not self.beta >= 0 or not self.delta > 0 or self.N < 1:
            raise ValueError("need beta >= 0, delta > 0, N >= 1")


def build_diffusion_spectrum(N: int) -> EigenSequence:
    """Cosine-mode spectrum of A = (I - d^2/dx^2)^{-1} on (0, 2 pi), Sigma = A^2.

    a_k = 1 / (1 + k^2) and sigma_k = a_k^2 for k = 1..N.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    k = np.arange(1, N + 1, dtype=float)
    a = 1.0 / (1.0 + k * k)
    return EigenSequence(a * a, a)


def build_sobolev_ic(params: SobolevICParams) -> np.ndarray:
    k = np.arange(1, params.N + 1, dtype=float)
    return k ** (-0.5 - params.beta - params.delta)


class NoiseStream:
    """Keyed source of standard normal noise vectors.

    The noise for ``step`` comes from block ``(step - 1) // block_steps``, and
    each block has its own PCG64 generator seeded from
    ``SeedSequence(seed, spawn_key=(trial_id, block))``. Any step can be
    regenerated on its own, and a sequential run only builds one generator per block.
    """

    MAX_BLOCK_STEPS = 256
    BLOCK_ENTRIES = 1 << 16

    def __init__(self, seed: int, trial_id: int, dimension: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if trial_id < 0 or dimension < 1:
            raise ValueError("need trial_id >= 0 and dimension >= 1")
        self.seed = int(seed)
        self.trial_id = int(trial_id)
        self.dimension = int(dimension)
        self.block_steps = max(1, min(self.MAX_BLOCK_STEPS, self.BLOCK_ENTRIES // self.dimension))

    def __repr__(self):
        return f"NoiseStream(seed={self.seed}, trial_id={self.trial_id}, dimension={self.dimension})"

    def block(self, index: int) -> np.ndarray:
        """Standard normals for steps ``index*block_steps + 1 ...``, shape (block_steps, dim)."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.trial_id, index))
        rng = np.random.Generator(np.random.PCG64(ss))
        return rng.standard_normal((self.block_steps, self.dimension))

    def normals(self, step: int) -> np.ndarray:
        if step < 1:
            raise ValueError("step must be >= 1")
        b, r = divmod(step - 1, self.block_steps)
        return self.block(b)[r]


def draw_observation(spec: ProblemSpec, stream: NoiseStream, step: int) -> np.ndarray:
    """y_step = A u_truth + gamma * eta_step."""
    if stream.dimension != spec.dim:
        raise ValueError(f"stream dimension {stream.dimension} != problem dimension {spec.dim}")
    return apply_forward(spec.op, spec.u_truth) + spec.gamma * stream.normals(step)


def weighted_norm_sq(op: OperatorRep, x, t: float):
    """||Sigma^{t/2} x||^2 summed over the last axis."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    x = np.asarray(x, dtype=float)
    # row-wise sums rather than BLAS products: a trial's value must not depend
    # on how many other trials share its batch
    if isinstance(op, EigenSequence):
        out = np.sum(x * x * op.sigma**t, axis=-1)
    else:
        proj = np.einsum("...i,ij->...j", x, op._evecs)
        out = np.sum(proj * proj * op._evals**t, axis=-1)
    return out if np.ndim(out) else float(out)
