"""Shrinkage (BLUP) scores and their population covariance.

The covariance ``G`` of a subject's observations can be built three ways:

``'full'``
    every retained grid eigenpair, interpolated the same way as the score
    eigenfunctions (default; keeps ``G`` and ``Psi`` mutually consistent,
    which matters when ``tau2`` is tiny and ``G`` is nearly singular);
``'truncated'``
    only the K leading eigenpairs;
``'kernel'``
    the exact kernel evaluated at the observation times.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from sparsepass.eigengrid import EigenSystem
from sparsepass.linalg import NotSPDError
from sparsepass.probdist import as_generator
from sparsepass.process import CovarianceKernel, SamplingDesign, SparseDataset

G_SOURCES = ("full", "truncated", "kernel")


@dataclass
class ShrinkageScoreSet:
    scores: np.ndarray
    groups: np.ndarray
    cov1: np.ndarray
    cov2: np.ndarray
    pooled: np.ndarray

    def group(self, g: int) -> np.ndarray:
        return self.scores[self.groups == g]


def _design_matrices(T, eigsys, tau2, g_source, kernel):
    """Stacked ``Psi`` (n, m, K) and ``G`` (n, m, m) for times ``T`` (n, m)."""
    if g_source not in G_SOURCES:
        raise ValueError(f"g_source must be one of {G_SOURCES}")
    K = eigsys.K
    if g_source == "truncated":
        Psi = eigsys.evaluate(T)
        G = np.einsum("nik,njk->nij", Psi * eigsys.values, Psi)
    elif g_source == "full":
        Pfull = eigsys.evaluate(T, full=True)
        Psi = Pfull[..., :K]
        G = np.einsum("nik,njk->nij", Pfull * eigsys.all_values, Pfull)
    else:
        if kernel is None:
            raise ValueError("g_source='kernel' requires the kernel")
        Psi = eigsys.evaluate(T)
        G = kernel.matrix(T)
    m = T.shape[-1]
    G = G + tau2 * np.eye(m)
    return Psi, G


def _shrinkage_operator(T, eigsys, tau2, g_source, kernel):
    """``diag(lambda) Psi^T G^{-1}`` stacked, shape (n, K, m), and ``Psi``."""
    Psi, G = _design_matrices(T, eigsys, tau2, g_source, kernel)
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(
            "observation covariance G is singular; tau2 = 0 with repeated or too many times?"
        ) from exc
    # solve G X = Psi, then B = diag(lambda) X^T
    X = np.linalg.solve(np.swapaxes(L, -1, -2), np.linalg.solve(L, Psi))
    B = np.swapaxes(X, -1, -2) * eigsys.values[:, None]
    return B, Psi


def blup_scores(
    times,
    values,
    eigsys: EigenSystem,
    tau2: float,
    mean: Callable | None = None,
    g_source: str = "full",
    kernel: CovarianceKernel | None = None,
) -> np.ndarray:
    """Shrinkage scores ``diag(lambda) Psi^T G^{-1} (y - mu0(t))`` for one subject."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size == 0 or times.size != values.size:
        raise ValueError("subject needs matching, non-empty times and values")
    resid = values - (mean(times) if mean is not None else 0.0)
    B, _ = _shrinkage_operator(times[None, :], eigsys, tau2, g_source, kernel)
    return B[0] @ resid


def dataset_scores(
    data: SparseDataset,
    eigsys: EigenSystem,
    tau2: float,
    mean: Callable | None = None,
    g_source: str = "full",
    kernel: CovarianceKernel | None = None,
) -> np.ndarray:
    """Scores for every subject, batched over subjects with equal counts."""
    n = len(data.subjects)
    out = np.empty((n, eigsys.K))
    counts = np.array([s.times.size for s in data.subjects])
    for m in np.unique(counts):
        idx = np.flatnonzero(counts == m)
        T = np.stack([data.subjects[i].times for i in idx])
        Y = np.stack([data.subjects[i].values for i in idx])
        if mean is not None:
            Y = Y - mean(T)
        B, _ = _shrinkage_operator(T, eigsys, tau2, g_source, kernel)
        out[idx] = np.einsum("nkm,nm->nk", B, Y)
    return out


def _draw_times(rng, design: SamplingDesign, S: int) -> list[np.ndarray]:
    gen = as_generator(rng)
    if design.is_fixed:
        return [design.draw_times(gen)]
    return [design.draw_times(gen) for _ in range(S)]


def score_cov_mc_groups(
    rng,
    eigsys: EigenSystem,
    design: SamplingDesign,
    offsets: Sequence[Callable | None],
    tau2: float,
    S: int = 10_000,
    g_source: str = "full",
    kernel: CovarianceKernel | None = None,
) -> list[np.ndarray]:
    """Population covariance of shrinkage scores for several mean offsets.

    All offsets share one set of design draws. For offset ``f`` (the group
    mean minus the centering mean) the result is::

        E_T[ diag(lam) Psi^T G^-1 Psi diag(lam) ] + Cov_T[ diag(lam) Psi^T G^-1 f(T) ]
    """
    if S < 1:
        raise ValueError("S must be positive")
    draws = _draw_times(rng, design, S)
    K = eigsys.K
    S_eff = len(draws)
    base = np.zeros((K, K))
    shifts = [np.empty((S_eff, K)) for _ in offsets]
    counts = np.array([t.size for t in draws])
    for m in np.unique(counts):
        idx = np.flatnonzero(counts == m)
        T = np.stack([draws[i] for i in idx])
        B, Psi = _shrinkage_operator(T, eigsys, tau2, g_source, kernel)
        M = np.einsum("nkm,nmj->nkj", B, Psi) * eigsys.values
        base += M.sum(axis=0)
        for f, sh in zip(offsets, shifts):
            sh[idx] = 0.0 if f is None else np.einsum("nkm,nm->nk", B, f(T))
    base /= S_eff
    base = 0.5 * (base + base.T)
    out = []
    for f, sh in zip(offsets, shifts):
        if f is None or S_eff == 1:
            out.append(base.copy())
        else:
            out.append(base + np.atleast_2d(np.cov(sh, rowvar=False)))
    return out


def score_cov_mc(
    rng,
    eigsys: EigenSystem,
    design: SamplingDesign,
    offset: Callable | None,
    tau2: float,
    S: int = 10_000,
    g_source: str = "full",
    kernel: CovarianceKernel | None = None,
) -> np.ndarray:
    return score_cov_mc_groups(rng, eigsys, design, [offset], tau2, S, g_source, kernel)[0]


def score_cov_empirical(scores1, scores2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unbiased per-group sample covariances and their pooled combination."""
    s1 = np.atleast_2d(np.asarray(scores1, dtype=float))
    s2 = np.atleast_2d(np.asarray(scores2, dtype=float))
    n1, n2 = s1.shape[0], s2.shape[0]
    if n1 < 2 or n2 < 2:
        raise ValueError("each group needs at least two subjects")
    c1 = np.atleast_2d(np.cov(s1, rowvar=False))
    c2 = np.atleast_2d(np.cov(s2, rowvar=False))
    pooled = ((n1 - 1) * c1 + (n2 - 1) * c2) / (n1 + n2 - 2)
    return c1, c2, pooled


def score_set(scores, groups) -> ShrinkageScoreSet:
    scores = np.asarray(scores, dtype=float)
    groups = np.asarray(groups, dtype=int)
    c1, c2, pooled = score_cov_empirical(scores[groups == 1], scores[groups == 2])
    return ShrinkageScoreSet(scores, groups, c1, c2, pooled)
