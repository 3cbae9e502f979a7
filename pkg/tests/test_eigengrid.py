import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize

from sparsepass.eigengrid import (
    EigenSystem,
    eigen_from_kernel,
    eigen_from_matrix,
    interp_columns,
    midpoint_grid,
    project_meandiff,
)
from sparsepass.process import CAR1, CompoundSymmetry, GridKernel, MeanDiff, NonStationaryRank2


def car1_eigenvalues(theta, count):
    """Eigenvalues of exp(-theta |s - t|) on [0, 1] from the transcendental equation."""
    f = lambda w: (w * w - theta * theta) * math.sin(w) - 2 * theta * w * math.cos(w)
    roots, grid = [], np.linspace(1e-6, (count + 2) * math.pi, 20000)
    vals = [f(w) for w in grid]
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa * fb < 0:
            roots.append(optimize.brentq(f, a, b, xtol=1e-14))
    return np.array([2 * theta / (theta**2 + w**2) for w in roots[:count]])


def check_orthonormal(es: EigenSystem, tol=1e-8):
    gram = es.h * es.functions.T @ es.functions
    np.testing.assert_allclose(gram, np.eye(es.K), atol=tol)


def test_case3_eigensystem():
    es = eigen_from_kernel(NonStationaryRank2(), R=100, pve=0.9)
    assert es.K == 2
    np.testing.assert_allclose(es.values, [1.0, 0.5], rtol=0.01)
    check_orthonormal(es)
    t = es.grid
    s1 = np.sign(es.h * es.functions[:, 0] @ np.sin(2 * np.pi * t))
    s2 = np.sign(es.h * es.functions[:, 1] @ np.cos(2 * np.pi * t))
    np.testing.assert_allclose(s1 * es.functions[:, 0], np.sqrt(2) * np.sin(2 * np.pi * t), atol=1e-6)
    np.testing.assert_allclose(s2 * es.functions[:, 1], np.sqrt(2) * np.cos(2 * np.pi * t), atol=1e-6)


def test_rank_one_kernel():
    es = eigen_from_kernel(CompoundSymmetry(2.0, 1.0), R=100, pve=0.95)
    assert es.K == 1
    assert es.values[0] == pytest.approx(2.0, rel=1e-10)
    np.testing.assert_allclose(es.functions[:, 0], 1.0, atol=1e-8)


def test_car1_against_analytic_spectrum():
    truth = car1_eigenvalues(math.log(2.0), 6)
    es = eigen_from_kernel(CAR1(), R=100, pve=0.95)
    fine = eigen_from_kernel(CAR1(), R=400, pve=0.95, method="lapack")
    k = min(es.K, 6)
    np.testing.assert_allclose(es.values[:k], truth[:k], rtol=0.02)
    np.testing.assert_allclose(es.values[:k], fine.values[:k], rtol=0.02)
    assert es.K == fine.K
    check_orthonormal(es)


def test_pve_rule():
    es = eigen_from_kernel(CAR1(), R=100, pve=0.9)
    ratio = np.cumsum(es.all_values) / es.all_values.sum()
    assert ratio[es.K - 1] >= 0.9 and (es.K == 1 or ratio[es.K - 2] < 0.9)
    assert es.pve_achieved == pytest.approx(ratio[es.K - 1])


def test_max_k_cap(caplog):
    es = eigen_from_kernel(CompoundSymmetry(1.0, 0.0), R=50, pve=1.0, max_k=5)
    assert es.K == 5
    assert "capping" in caplog.text


def test_errors():
    with pytest.raises(ValueError):
        eigen_from_kernel(CAR1(), R=10)
    with pytest.raises(ValueError):
        eigen_from_kernel(CAR1(), pve=0.0)
    with pytest.raises(ValueError):
        eigen_from_matrix(midpoint_grid(3), np.diag([1.0, -1.0, 0.5]))


def test_projection_examples():
    es = eigen_from_kernel(NonStationaryRank2(), R=100, pve=0.9)
    np.testing.assert_array_equal(project_meandiff(es, MeanDiff()), np.zeros(2))
    pw = MeanDiff("piecewise", knots=tuple(es.grid), values=tuple(3.0 * es.functions[:, 0]))
    np.testing.assert_allclose(project_meandiff(es, pw), [3.0, 0.0], atol=1e-8)


def test_cubic_projection_against_quadrature():
    es = eigen_from_kernel(NonStationaryRank2(), R=100, pve=0.9)
    d1 = integrate.quad(lambda t: t**3 * math.sqrt(2) * math.sin(2 * math.pi * t), 0, 1, epsabs=1e-13)[0]
    d2 = integrate.quad(lambda t: t**3 * math.sqrt(2) * math.cos(2 * math.pi * t), 0, 1, epsabs=1e-13)[0]
    delta = project_meandiff(es, MeanDiff.cubic(1.0))
    np.testing.assert_allclose(np.abs(delta), [abs(d1), abs(d2)], rtol=1e-3)
    # frozen values, signs follow the eigenvector convention
    np.testing.assert_allclose(np.abs(delta), [0.19091, 0.10747], atol=2e-4)


def test_grid_refinement_consistency():
    for k in (CAR1(), NonStationaryRank2()):
        a = eigen_from_kernel(k, R=100, pve=0.9, method="lapack")
        b = eigen_from_kernel(k, R=200, pve=0.9, method="lapack")
        np.testing.assert_allclose(a.values, b.values[: a.K], rtol=0.01)


def test_interp_columns_linear_exact():
    grid = midpoint_grid(20)
    F = np.stack([2 * grid + 1, -grid], axis=1)
    x = np.array([0.0, 0.013, 0.5, 0.99, 1.0])
    np.testing.assert_allclose(interp_columns(x, grid, F), np.stack([2 * x + 1, -x], axis=1), atol=1e-12)


def test_truncate_and_covariance():
    es = eigen_from_kernel(CAR1(), R=100, pve=0.95, method="lapack")
    t = np.array([0.2, 0.6])
    np.testing.assert_allclose(es.covariance(t), CAR1().matrix(t), atol=5e-3)
    t1 = es.truncate(1)
    assert t1.K == 1 and t1.values[0] == es.values[0]


@pytest.mark.parametrize("kernel", [CAR1(), NonStationaryRank2(), CompoundSymmetry(1.0, 0.5)])
@pytest.mark.parametrize("R", [50, 100, 200])
def test_orthonormality_all_kernels(kernel, R):
    es = eigen_from_kernel(kernel, R=R, pve=0.95, method="lapack")
    check_orthonormal(es)
    assert np.all(es.values > 0) and es.K >= 1


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4))
def test_parseval_bound(coefs):
    es = eigen_from_kernel(CAR1(), R=100, pve=0.95, method="lapack")
    md = MeanDiff("polynomial", coefficients=tuple(coefs))
    delta = project_meandiff(es, md)
    assert np.sum(delta**2) <= es.h * np.sum(md(es.grid) ** 2) + 1e-8


def test_grid_kernel_round_trip():
    es = eigen_from_kernel(NonStationaryRank2(), R=100, pve=0.9)
    gk = GridKernel(es.grid, es.covariance(es.grid))
    back = eigen_from_kernel(gk, R=100, pve=0.9)
    np.testing.assert_allclose(back.values, es.values, rtol=1e-8)
