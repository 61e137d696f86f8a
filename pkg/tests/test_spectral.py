from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avgfilt.spectral import RegFilterParams, eval_q, eval_r, q_bound, q_values, r_bound, r_values


def P(n, alpha):
    return RegFilterParams(n, alpha)


def exact_r(n, alpha, lam):
    return Fraction(alpha) ** n / (Fraction(alpha) + Fraction(lam)) ** n


def test_r_examples():
    assert eval_r(P(1, 1.0), 0.0) == 1.0
    assert eval_r(P(2, 1.0), 1.0) == pytest.approx(0.25, rel=1e-15)
    assert eval_r(P(2, 1.0), 1.0) <= 1.0 / (1.0 + 2 * 1.0)


def test_q_examples():
    assert eval_q(P(1, 1.0), 1.0) == pytest.approx(0.5, rel=1e-15)
    assert eval_q(P(2, 1.0), 1.0) == pytest.approx(0.75, rel=1e-15)
    assert eval_q(P(3, 2.0), 0.0) == 1.5


@pytest.mark.parametrize("n,alpha,lam", [(7, 0.3, 2.5), (40, 3.0, 0.01), (3, 1e-3, 1e3), (250, 2.0, 1e-4)])
def test_r_q_against_rational_arithmetic(n, alpha, lam):
    r = exact_r(n, alpha, lam)
    q = (1 - r) / Fraction(lam)
    assert eval_r(P(n, alpha), lam) == pytest.approx(float(r), rel=1e-12)
    assert eval_q(P(n, alpha), lam) == pytest.approx(float(q), rel=1e-12)


def test_bound_examples():
    assert r_bound(P(2, 1.0), 0, 1.0) == 1.0
    assert r_bound(P(2, 1.0), 1, 1.0) == pytest.approx(0.5)
    assert r_bound(P(1, 1.0), 2, 2.0) == pytest.approx(2.0)
    assert q_bound(P(4, 1.0), 0, 1.0) == pytest.approx(4.0)
    assert q_bound(P(4, 1.0), 1, 1.0) == pytest.approx(1.0)
    assert q_bound(P(2, 1.0), 1.5, 4.0) == pytest.approx(2.0)


@pytest.mark.parametrize("bad", [dict(n=0, alpha=1.0), dict(n=2, alpha=0.0), dict(n=1.5, alpha=1.0)])
def test_invalid_params(bad):
    with pytest.raises(ValueError):
        RegFilterParams(**bad)


def test_negative_lambda_rejected():
    with pytest.raises(ValueError):
        eval_r(P(1, 1.0), -1e-3)
    with pytest.raises(ValueError):
        eval_q(P(1, 1.0), -1.0)
    with pytest.raises(ValueError):
        r_bound(P(1, 1.0), -1, 1.0)
    with pytest.raises(ValueError):
        q_bound(P(1, 1.0), 1, 0.0)


def test_q_small_lambda_no_cancellation():
    # n lam / alpha = 1e-8: the naive (1 - r) / lam keeps only ~8 digits
    lam, n = 1e-12, 10_000
    expected = n * (1 - (n + 1) * lam / 2)  # two-term expansion, error O((n lam)^2)
    assert eval_q(P(n, 1.0), lam) == pytest.approx(expected, rel=1e-14)


def test_q_continuous_at_zero():
    for n, alpha in [(1, 1.0), (100, 0.5), (10_000, 3.0)]:
        assert abs(eval_q(P(n, alpha), 1e-14) - n / alpha) <= 1e-6 * n / alpha


def test_vectorized_broadcasting():
    lam = np.array([0.0, 0.5, 2.0])
    n = np.array([[1], [3]])
    q = q_values(n, 1.0, lam)
    assert q.shape == (2, 3)
    assert q[1, 0] == 3.0
    assert q[0, 1] == pytest.approx(eval_q(P(1, 1.0), 0.5))
    assert r_values(n, 1.0, lam).shape == (2, 3)


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(1, 300),
    alpha=st.floats(1e-3, 1e3),
    lam1=st.floats(0, 1e4),
    gap=st.floats(1e-3, 1e3),
)
def test_monotonicity(n, alpha, lam1, gap):
    # separations well above double resolution
    lam2 = lam1 * (1 + 1e-2 * gap) + 1e-6 * alpha
    assert eval_r(P(n, alpha), lam2) < eval_r(P(n, alpha), lam1) or eval_r(P(n, alpha), lam1) == 0.0
    if lam1 > 1e-9 * alpha:
        assert eval_r(P(n + 1, alpha), lam1) < eval_r(P(n, alpha), lam1) or eval_r(P(n, alpha), lam1) == 0.0
    assert eval_q(P(n + 1, alpha), lam1) >= eval_q(P(n, alpha), lam1)


@settings(max_examples=300, deadline=None)
@given(m=st.integers(1, 400), alpha=st.floats(1e-3, 1e3), log_lam=st.floats(-12, 6))
def test_sum_of_r_equals_alpha_q(m, alpha, log_lam):
    lam = 10.0**log_lam
    brute = sum(eval_r(P(k, alpha), lam) for k in range(1, m + 1))
    closed = alpha * eval_q(P(m, alpha), lam)
    assert abs(brute - closed) <= 1e-10 * max(1.0, closed)


@settings(max_examples=300, deadline=None)
@given(
    n=st.integers(1, 50),
    alpha=st.floats(1e-3, 1e3),
    frac=st.floats(0, 1),
    p=st.floats(0, 60),
    log_Lambda=st.floats(-6, 3),
)
def test_bounds_hold(n, alpha, frac, p, log_Lambda):
    Lambda = 10.0**log_Lambda
    lam = frac * Lambda
    params = P(n, alpha)
    assert lam**p * eval_r(params, lam) <= r_bound(params, p, Lambda) * (1 + 1e-12)
    assert lam**p * eval_q(params, lam) <= q_bound(params, p, Lambda) * (1 + 1e-12)
    # lam^p q <= lam^(p-1) for lam > 0
    if lam > 1e-100:
        assert lam**p * eval_q(params, lam) <= lam ** (p - 1) * (1 + 1e-12)
