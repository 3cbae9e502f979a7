"""Simplified functional PCA for sparse, irregular data.

Mean: local-linear Epanechnikov smoother of the pooled (time, value) pairs.
Covariance: 2-D kernel smoother of within-subject residual cross-products
``r_ij * r_ij'`` (j != j'), so measurement error never enters the surface;
the error variance is recovered from the diagonal afterwards.

Both smoothers work on binned sufficient statistics: observations are
assigned to fine bins and the per-bin sums of 1, t, t^2, y, t*y (and the 2-D
analogues) are kept. Kernel weights are evaluated at bin centres, but the
local fits use the exact coordinates, so linear data are still reproduced
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sparsepass.eigengrid import EigenSystem, eigen_from_matrix, interp_columns, midpoint_grid
from sparsepass.linalg import psd_project
from sparsepass.process import SparseDataset
from sparsepass.shrinkage import dataset_scores

MEAN_BINS = 1000
COV_BINS = 200


def epanechnikov(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < 1.0, 0.75 * (1.0 - u * u), 0.0)


def _bin_index(t, nbins):
    return np.minimum((np.asarray(t) * nbins).astype(int), nbins - 1)


def _local_linear_1d(t, y, grid, bandwidth, nbins=MEAN_BINS):
    idx = _bin_index(t, nbins)
    stats = np.stack(
        [np.bincount(idx, weights=w, minlength=nbins) for w in (np.ones_like(t), t, t * t, y, t * y)]
    )
    centres = (np.arange(nbins) + 0.5) / nbins
    W = epanechnikov((centres[None, :] - grid[:, None]) / bandwidth)
    n0, m1, m2, my, mty = (W @ stats.T).T
    g = grid
    s0 = n0
    s1 = m1 - g * n0
    s2 = m2 - 2 * g * m1 + g * g * n0
    t0 = my
    t1 = mty - g * my
    det = s0 * s2 - s1 * s1
    scale = np.maximum(s0 * s2, 1e-300)
    out = np.full(g.size, np.nan)
    ok = det > 1e-10 * scale
    out[ok] = (s2[ok] * t0[ok] - s1[ok] * t1[ok]) / det[ok]
    nw = ~ok & (s0 > 0)
    out[nw] = t0[nw] / s0[nw]
    return out


def _fill_nan(grid, f):
    bad = ~np.isfinite(f)
    if bad.all():
        raise ValueError("bandwidth too small: no data near any grid point")
    if bad.any():
        f = f.copy()
        f[bad] = np.interp(grid[bad], grid[~bad], f[~bad])
    return f


def estimate_mean(data: SparseDataset, grid, bandwidth: float = 0.1, group: int | None = None) -> np.ndarray:
    """Local-linear estimate of the (pooled or single-group) mean on ``grid``."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    subjects = data.subjects if group is None else [s for s in data.subjects if s.group == group]
    if not subjects:
        raise ValueError("no data")
    t = np.concatenate([s.times for s in subjects])
    y = np.concatenate([s.values for s in subjects])
    if t.size == 0:
        raise ValueError("no data")
    grid = np.asarray(grid, dtype=float)
    return _fill_nan(grid, _local_linear_1d(t, y, grid, bandwidth))


def _residual_pairs(data: SparseDataset, mean_fn, band: float = 0.0):
    xs, ys, cs = [], [], []
    counts = np.array([s.times.size for s in data.subjects])
    for m in np.unique(counts):
        if m < 2:
            continue
        idx = np.flatnonzero(counts == m)
        T = np.stack([data.subjects[i].times for i in idx])
        Rr = np.stack([data.subjects[i].values for i in idx]) - mean_fn(T)
        a, b = np.nonzero(~np.eye(m, dtype=bool))
        xs.append(T[:, a].ravel())
        ys.append(T[:, b].ravel())
        cs.append((Rr[:, a] * Rr[:, b]).ravel())
    if not xs:
        raise ValueError("no subject has two or more observations; covariance is not identifiable")
    x, y, c = np.concatenate(xs), np.concatenate(ys), np.concatenate(cs)
    if band > 0:
        keep = np.abs(x - y) >= band
        if not keep.any():
            raise ValueError("diagonal band removes every pair")
        x, y, c = x[keep], y[keep], c[keep]
    return x, y, c


def _smooth_surface(x, y, c, grid, bandwidth, method, nbins=COV_BINS):
    ix, iy = _bin_index(x, nbins), _bin_index(y, nbins)
    flat = ix * nbins + iy
    size = nbins * nbins

    def acc(w):
        return np.bincount(flat, weights=w, minlength=size).reshape(nbins, nbins)

    centres = (np.arange(nbins) + 0.5) / nbins
    W = epanechnikov((centres[None, :] - grid[:, None]) / bandwidth)

    def smooth(stat):
        return W @ stat @ W.T

    one = np.ones_like(c)
    M = smooth(acc(one))
    MC = smooth(acc(c))
    if method == "nw":
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(M > 0, MC / M, np.nan)
    if method != "ll":
        raise ValueError(f"unknown covariance smoother {method!r}")
    Mx, My = smooth(acc(x)), smooth(acc(y))
    Mxx, Mxy, Myy = smooth(acc(x * x)), smooth(acc(x * y)), smooth(acc(y * y))
    MxC, MyC = smooth(acc(x * c)), smooth(acc(y * c))
    s = grid[:, None]
    t = grid[None, :]
    su = Mx - s * M
    sv = My - t * M
    suu = Mxx - 2 * s * Mx + s * s * M
    suv = Mxy - s * My - t * Mx + s * t * M
    svv = Myy - 2 * t * My + t * t * M
    ru = MxC - s * MC
    rv = MyC - t * MC
    A = np.stack(
        [np.stack([M, su, sv], -1), np.stack([su, suu, suv], -1), np.stack([sv, suv, svv], -1)], -2
    )
    rhs = np.stack([MC, ru, rv], -1)
    det = np.linalg.det(A)
    scale = np.maximum(M * suu * svv, 1e-300)
    ok = det > 1e-10 * scale
    out = np.full(M.shape, np.nan)
    out[ok] = np.linalg.solve(A[ok], rhs[ok][..., None])[..., 0, 0]
    nw = ~ok & (M > 0)
    out[nw] = MC[nw] / M[nw]
    return out


def estimate_covariance(
    data: SparseDataset,
    mean_grid,
    grid,
    bandwidth: float = 0.15,
    method: str = "ll",
    band: float = 0.0,
    return_raw: bool = False,
):
    """Smoothed covariance surface on ``grid`` and the measurement-error variance.

    Returns the PSD-projected surface and ``tau2_hat >= 0``, the average of
    ``r_ij^2 - Sigma_hat(t_ij, t_ij)`` over all observations. Pairs closer than
    ``band`` in time are dropped before smoothing. With ``return_raw`` the
    symmetrized surface before projection is returned as a third item.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    grid = np.asarray(grid, dtype=float)
    mean_grid = np.asarray(mean_grid, dtype=float)

    def mean_fn(t):
        return interp_columns(t, grid, mean_grid[:, None])[..., 0]

    x, y, c = _residual_pairs(data, mean_fn, band)
    S = _smooth_surface(x, y, c, grid, bandwidth, method)
    if not np.all(np.isfinite(S)):
        bad = ~np.isfinite(S)
        S[bad] = np.nanmean(S)
    raw = 0.5 * (S + S.T)
    S = psd_project(raw)
    t_all, y_all = data.pooled()
    r2 = (y_all - mean_fn(t_all)) ** 2
    diag = interp_columns(t_all, grid, np.diag(S)[:, None])[..., 0]
    tau2 = max(float(np.mean(r2 - diag)), 0.0)
    if return_raw:
        return S, tau2, raw
    return S, tau2


@dataclass
class FpcaFit:
    grid: np.ndarray
    mean: np.ndarray
    group_means: dict
    cov: np.ndarray
    tau2: float
    eigsys: EigenSystem
    scores: np.ndarray
    groups: np.ndarray

    def mean_at(self, t):
        return interp_columns(t, self.grid, self.mean[:, None])[..., 0]

    def effect_curve(self) -> np.ndarray:
        """Estimated group-1 minus group-2 mean on the grid."""
        return self.group_means[1] - self.group_means[2]


def fpca_fit(
    data: SparseDataset,
    R: int = 100,
    pve: float = 0.95,
    h_mean: float = 0.1,
    h_cov: float = 0.15,
    cov_method: str = "ll",
    band: float = 0.0,
    eig_method: str = "lapack",
    tau2_floor: float = 1e-6,
    max_k: int = 20,
    pve_denominator: str = "positive",
) -> FpcaFit:
    """Estimate mean, covariance, error variance and eigensystem, then score subjects.

    The number of components is chosen by PVE. With ``pve_denominator='positive'``
    the ratio is taken against the sum of the retained eigenvalues; with
    ``'raw'`` against the trace of the surface before PSD projection, which
    stops noise eigenvalues from diluting the ratio when the surface is
    estimated from many subjects. Scores are centred on the pooled mean.
    ``tau2_floor`` (relative to the largest eigenvalue) keeps the observation
    covariance invertible when the estimated error variance is clipped to zero.
    """
    data.validate(two_sample=False)
    grid = midpoint_grid(R)
    mu = estimate_mean(data, grid, h_mean)
    groups = data.groups
    gmeans = {}
    for g in (1, 2):
        if np.any(groups == g):
            gmeans[g] = estimate_mean(data, grid, h_mean, group=g)
    cov, tau2, raw = estimate_covariance(data, mu, grid, h_cov, cov_method, band, return_raw=True)
    if pve_denominator not in ("positive", "raw"):
        raise ValueError("pve_denominator must be 'positive' or 'raw'")
    total = float(np.trace(raw)) / R if pve_denominator == "raw" else None
    eigsys = eigen_from_matrix(grid, cov, pve, max_k=max_k, method=eig_method, total=total)
    nugget = max(tau2, tau2_floor * float(eigsys.values[0]))

    def mean_fn(t):
        return interp_columns(t, grid, mu[:, None])[..., 0]

    scores = dataset_scores(data, eigsys, nugget, mean=mean_fn, g_source="full")
    return FpcaFit(grid, mu, gmeans, cov, tau2, eigsys, scores, groups)
