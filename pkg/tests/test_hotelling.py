import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sparsepass.hotelling import (
    SingularCovarianceError,
    hotelling_statistic,
    hotelling_test,
    rejection_threshold,
    test_decision as decide,
)


def test_identical_means_give_zero():
    s = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]])
    assert hotelling_statistic(s, s + 0.0) == pytest.approx(0.0, abs=1e-14)


def test_hand_example():
    assert hotelling_statistic([[0.0], [2.0]], [[1.0], [3.0]]) == pytest.approx(0.5)


def test_threshold_example():
    thr = rejection_threshold(2, 100, 0.05)
    assert thr == pytest.approx(98 * 2 / 97 * stats.f.ppf(0.95, 2, 97), rel=1e-10)
    assert thr == pytest.approx(6.244, abs=1e-3)


def test_decision_edges():
    thr = rejection_threshold(2, 100, 0.05)
    r = decide(thr + 1e-9, 2, 50, 50)
    assert r.reject and r.p_value < 0.05
    r = decide(0.0, 2, 50, 50)
    assert not r.reject and r.p_value == 1.0
    r = decide(thr, 2, 50, 50)
    assert not r.reject and r.p_value >= 0.05


def test_chi2_rule():
    r = decide(6.0, 2, 50, 50, rule="chi2")
    assert r.threshold == pytest.approx(stats.chi2.ppf(0.95, 2))
    assert r.reject == (6.0 > r.threshold)
    with pytest.raises(ValueError):
        decide(1.0, 2, 50, 50, rule="wald")
    with pytest.raises(ValueError):
        decide(1.0, 2, 50, 50, alpha=1.5)


def test_input_errors():
    with pytest.raises(ValueError):
        hotelling_statistic([[0.0]], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        hotelling_statistic(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        rejection_threshold(5, 6, 0.05)
    with pytest.raises(SingularCovarianceError):
        hotelling_statistic(np.ones((4, 2)), np.ones((4, 2)))


def test_null_size():
    rng = np.random.default_rng(1)
    L = np.array([[1.0, 0.4, 0.0], [0.4, 2.0, 0.3], [0.0, 0.3, 0.5]])
    rejections = 0
    reps = 10_000
    for _ in range(reps):
        a = rng.multivariate_normal(np.zeros(3), L, 20)
        b = rng.multivariate_normal(np.zeros(3), L, 25)
        rejections += hotelling_test(a, b).reject
    assert rejections / reps == pytest.approx(0.05, abs=0.01)


def test_p_value_matches_scipy_f():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((15, 2)), rng.standard_normal((12, 2)) + 0.5
    r = hotelling_test(a, b)
    n, K = 27, 2
    p = stats.f.sf(r.T * (n - K - 1) / ((n - 2) * K), K, n - K - 1)
    assert r.p_value == pytest.approx(p, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 4))
def test_invariances(seed, K):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((10, K))
    b = rng.standard_normal((12, K)) + 0.3
    T = hotelling_statistic(a, b)
    A = rng.standard_normal((K, K)) + 3 * np.eye(K)
    assert hotelling_statistic(a @ A.T, b @ A.T) == pytest.approx(T, rel=1e-8)
    assert hotelling_statistic(b, a) == pytest.approx(T, rel=1e-12)
    shift = rng.standard_normal(K)
    assert hotelling_statistic(a + shift, b + shift) == pytest.approx(T, rel=1e-8, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.floats(1.01, 5.0))
def test_monotone_in_separation(seed, factor):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((10, 2))
    b = rng.standard_normal((10, 2))
    shift = np.array([0.7, -0.2])
    b0 = b - b.mean(0) + a.mean(0)
    t1 = hotelling_statistic(a, b0 + shift)
    t2 = hotelling_statistic(a, b0 + factor * shift)
    assert t2 > t1


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 50.0), st.integers(1, 5), st.integers(10, 300))
def test_reject_iff_p_below_alpha(T, K, n):
    r = decide(T, K, n // 2, n - n // 2)
    assert r.reject == (T > r.threshold) == (r.p_value < r.alpha)
