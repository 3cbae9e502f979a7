"""Eigenvalues and eigenfunctions of a covariance kernel on a midpoint grid."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from sparsepass.linalg import sym_eigen
from sparsepass.process import CovarianceKernel, MeanDiff

log = logging.getLogger(__name__)

MAX_COMPONENTS = 20


def midpoint_grid(R: int) -> np.ndarray:
    return (np.arange(R) + 0.5) / R


def interp_columns(x, grid: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation of the columns of ``F`` at ``x``.

    Points beyond the outermost grid nodes are extrapolated linearly from the
    end segments. Works on arrays ``x`` of any shape; the column axis is
    appended last.
    """
    x = np.asarray(x, dtype=float)
    i = np.clip(np.searchsorted(grid, x, side="right") - 1, 0, grid.size - 2)
    w = (x - grid[i]) / (grid[i + 1] - grid[i])
    return F[i] * (1.0 - w)[..., None] + F[i + 1] * w[..., None]


@dataclass
class EigenSystem:
    """Leading eigencomponents of a covariance operator evaluated on a grid.

    ``values``/``functions`` hold the K retained components. ``all_values`` and
    ``all_functions`` keep every eigenpair above the noise floor; they are used
    to rebuild the covariance between arbitrary time points consistently with
    the interpolated eigenfunctions.
    """

    grid: np.ndarray
    values: np.ndarray
    functions: np.ndarray
    all_values: np.ndarray
    all_functions: np.ndarray
    pve_achieved: float

    @property
    def K(self) -> int:
        return int(self.values.size)

    @property
    def h(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def evaluate(self, t, full: bool = False) -> np.ndarray:
        F = self.all_functions if full else self.functions
        return interp_columns(t, self.grid, F)

    def covariance(self, t, t2=None, full: bool = True) -> np.ndarray:
        """``sum_k lambda_k psi_k(t) psi_k(t2)`` over the full or truncated set."""
        lam = self.all_values if full else self.values
        A = self.evaluate(t, full)
        B = A if t2 is None else self.evaluate(t2, full)
        return np.einsum("...ik,...jk->...ij", A * lam, B)

    def truncate(self, K: int) -> "EigenSystem":
        K = max(1, min(int(K), self.all_values.size))
        pos = self.all_values
        return EigenSystem(
            self.grid,
            pos[:K].copy(),
            self.all_functions[:, :K].copy(),
            pos,
            self.all_functions,
            float(pos[:K].sum() / pos.sum()),
        )


def eigen_from_matrix(
    grid,
    cov,
    pve: float = 0.95,
    max_k: int = MAX_COMPONENTS,
    method: str = "jacobi",
    total: float | None = None,
) -> EigenSystem:
    """Eigensystem of a covariance surface sampled on an equally spaced grid.

    ``total`` overrides the variance used as the PVE denominator (default: the
    sum of retained eigenvalues). Estimated surfaces pass the trace of the
    unprojected estimate so that noise eigenvalues do not dilute the ratio.
    """
    grid = np.asarray(grid, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if grid.size < 2:
        raise ValueError("grid needs at least two points")
    if not 0.0 < pve <= 1.0:
        raise ValueError("pve must lie in (0, 1]")
    h = float(grid[1] - grid[0])
    eig = sym_eigen(cov * h, method=method)
    lam = eig.values
    if lam[0] <= 0:
        raise ValueError("covariance has no positive eigenvalues")
    if lam[-1] < -1e-8 * lam[0]:
        raise ValueError("kernel is not positive semidefinite on the grid")
    keep = lam > 1e-10 * lam[0]
    lam = lam[keep]
    psi = eig.vectors[:, keep] / np.sqrt(h)
    denom = lam.sum() if total is None or total <= 0 else min(float(total), lam.sum())
    ratio = np.cumsum(lam) / denom
    K = int(np.searchsorted(ratio, pve - 1e-12) + 1)
    K = min(K, lam.size)
    if K > max_k:
        log.warning("PVE %.3f needs %d components; capping at %d", pve, K, max_k)
        K = max_k
    return EigenSystem(grid, lam[:K], psi[:, :K], lam, psi, float(min(ratio[K - 1], 1.0)))


def eigen_from_kernel(
    kernel: CovarianceKernel,
    R: int = 100,
    pve: float = 0.95,
    max_k: int = MAX_COMPONENTS,
    method: str = "jacobi",
) -> EigenSystem:
    """Evaluate ``kernel`` on the midpoint grid ``(r - 1/2)/R`` and decompose it."""
    if R < 20:
        raise ValueError("grid size R must be at least 20")
    grid = midpoint_grid(R)
    return eigen_from_matrix(grid, kernel.matrix(grid), pve, max_k, method)


def project_meandiff(eigsys: EigenSystem, meandiff: MeanDiff) -> np.ndarray:
    """Projections ``delta_k = h * sum_r eta(t_r) psi_k(t_r)``."""
    return eigsys.h * eigsys.functions.T @ meandiff(eigsys.grid)
