import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sparsepass.probdist import (
    RngStream,
    as_generator,
    betainc,
    chi2_cdf,
    chi2_quantile,
    chisq_sample,
    f_cdf,
    f_quantile,
    f_sf,
    gammainc,
    mvn_sample,
    noncentral_chisq1_sample,
    scaled_f_pvalue,
)

DF_GRID = [0.5, 1, 2, 3.5, 7, 20, 97, 500, 1e4]
P_GRID = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99]


def test_f_quantile_examples():
    # large d2 approaches the chi-squared(1) quantile
    assert f_quantile(0.95, 1, 1e6) == pytest.approx(3.8415, abs=1e-3)
    assert f_quantile(0.5, 7, 7) == pytest.approx(1.0, abs=1e-12)
    assert f_quantile(0.95, 2, 10) == pytest.approx(4.1028, abs=1e-4)


def test_f_quantile_against_scipy():
    for d1 in (1, 2, 3, 5.5):
        for d2 in (3, 10, 97, 1000):
            for p in P_GRID:
                assert f_quantile(p, d1, d2) == pytest.approx(stats.f.ppf(p, d1, d2), rel=1e-9)


def test_chi2_quantile_against_scipy():
    for df in DF_GRID:
        for p in P_GRID:
            assert chi2_quantile(p, df) == pytest.approx(stats.chi2.ppf(p, df), rel=1e-9)


def test_special_functions_against_scipy():
    from scipy import special

    for a, b, x in [(0.5, 0.5, 0.3), (2, 48.5, 0.01), (10, 3, 0.9), (1e3, 2, 0.999)]:
        assert betainc(a, b, x) == pytest.approx(special.betainc(a, b, x), rel=1e-12, abs=1e-300)
    for a, x in [(0.5, 0.1), (3, 2.5), (50, 60), (1.75, 20)]:
        assert gammainc(a, x) == pytest.approx(special.gammainc(a, x), rel=1e-12)


def test_f_sf_small_tail():
    assert f_sf(200.0, 2, 50) == pytest.approx(stats.f.sf(200.0, 2, 50), rel=1e-8)
    assert f_cdf(0.0, 2, 3) == 0.0 and f_sf(0.0, 2, 3) == 1.0


def test_quantile_round_trip_grid():
    worst = 0.0
    for d1 in DF_GRID:
        for d2 in DF_GRID:
            for p in P_GRID:
                worst = max(worst, abs(f_cdf(f_quantile(p, d1, d2), d1, d2) - p))
    assert worst <= 1e-9
    for df in DF_GRID:
        for p in P_GRID:
            assert abs(chi2_cdf(chi2_quantile(p, df), df) - p) <= 1e-9


def test_invalid_arguments():
    for bad in [(0.0, 1, 1), (1.0, 1, 1), (0.5, 0, 1), (0.5, 1, -1)]:
        with pytest.raises(ValueError):
            f_quantile(*bad)
    with pytest.raises(ValueError):
        chi2_quantile(0.5, 0)
    with pytest.raises(ValueError):
        chisq_sample(1, -1.0)
    with pytest.raises(ValueError):
        noncentral_chisq1_sample(1, -0.1)


def test_scaled_f_pvalue_examples():
    assert scaled_f_pvalue(0.0, 2, 100) == 1.0
    K, n = 2, 100
    thr = (n - 2) * K / (n - K - 1) * f_quantile(0.95, K, n - K - 1)
    assert scaled_f_pvalue(thr, K, n) == pytest.approx(0.05, abs=1e-10)
    assert scaled_f_pvalue(3.851, 1, 1002) == pytest.approx(0.05, abs=5e-4)


def test_noncentral_and_central_means():
    g = RngStream(1).generator
    assert noncentral_chisq1_sample(g, 0.0, 10**6).mean() == pytest.approx(1.0, abs=0.01)
    assert noncentral_chisq1_sample(g, 4.0, 10**6).mean() == pytest.approx(5.0, abs=0.02)
    assert chisq_sample(g, 3.7, 10**6).mean() == pytest.approx(3.7, abs=0.02)


@pytest.mark.parametrize("df", [1, 3.5, 10])
def test_chisq_sample_ks(df):
    x = chisq_sample(RngStream(2, (int(df * 10),)), df, 10**4)
    assert stats.kstest(x, stats.chi2(df).cdf).statistic <= 0.02


def test_noncentral_sample_ks():
    x = noncentral_chisq1_sample(RngStream(3), 2.5, 10**4)
    assert stats.kstest(x, stats.ncx2(1, 2.5).cdf).statistic <= 0.02


def test_mvn_examples():
    g = RngStream(4).generator
    x = mvn_sample(g, [0.0, 0.0], np.eye(2), 10**5)
    np.testing.assert_allclose(x.var(axis=0), [1.0, 1.0], atol=0.02)
    cov = np.array([[2.0, 1.0], [1.0, 2.0]])
    x = mvn_sample(g, [1.0, -1.0], cov, 10**5)
    np.testing.assert_allclose(np.cov(x, rowvar=False), cov, atol=0.03)
    se = np.sqrt(np.diag(cov) / 10**5)
    assert np.all(np.abs(x.mean(axis=0) - [1.0, -1.0]) <= 3 * se)
    np.testing.assert_array_equal(mvn_sample(g, [3.0, 4.0], np.zeros((2, 2)), 5), np.tile([3.0, 4.0], (5, 1)))


def test_rng_stream_determinism_and_substreams():
    a = RngStream(42).substream(3).generator.random(16)
    b = RngStream(42).substream(3).generator.random(16)
    np.testing.assert_array_equal(a, b)
    # drawing from a parent or sibling does not disturb a substream
    parent = RngStream(42)
    parent.generator.random(1000)
    parent.substream(2).generator.random(50)
    np.testing.assert_array_equal(parent.substream(3).generator.random(16), a)
    seqs = [RngStream(42).substream(i).generator.random(16) for i in range(50)]
    assert len({tuple(s) for s in seqs}) == 50
    assert not np.array_equal(RngStream(42).generator.random(16), RngStream(43).generator.random(16))
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(TypeError):
        as_generator("seed")


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.001, 0.999),
    st.floats(0.3, 2000.0),
    st.floats(0.3, 2000.0),
)
def test_f_round_trip_property(p, d1, d2):
    x = f_quantile(p, d1, d2)
    assert math.isfinite(x) and x > 0
    assert abs(f_cdf(x, d1, d2) - p) <= 1e-9
