"""Dense symmetric linear algebra.

Everything downstream works with small symmetric matrices (score
covariances of size K) or grid covariance matrices of size R <= 512, so
the routines here are dense and operate on ``numpy`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular


class LinAlgInputError(ValueError):
    """Raised for non-symmetric or non-finite input."""


class NotSPDError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be positive definite is not."""


@dataclass(frozen=True)
class SymEigen:
    """Eigenvalues sorted descending and matching orthonormal eigenvector columns."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def _as_square(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise LinAlgInputError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise LinAlgInputError("matrix has non-finite entries")
    return A


def check_symmetric(A, rtol: float = 1e-12) -> np.ndarray:
    A = _as_square(A)
    scale = max(np.max(np.abs(A)), np.finfo(float).tiny)
    if np.max(np.abs(A - A.T)) > rtol * scale:
        raise LinAlgInputError("matrix is not symmetric")
    return 0.5 * (A + A.T)


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings of 0..n-1 such that every pair (p, q) meets once per sweep.

    Each round is a set of disjoint pairs, so its rotations commute and can be
    applied together.
    """
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a >= 0 and b >= 0:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=int), np.array(q, dtype=int)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi(A: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    n = A.shape[0]
    A = A.copy()
    V = np.eye(n)
    norm = np.linalg.norm(A)
    if n == 1 or norm == 0.0:
        return np.diag(A).copy(), V
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off < tol * norm:
            break
        for p, q in rounds:
            apq = A[p, q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (A[q, q] - A[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(1.0 + theta**2))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t**2)
            s = t * c
            Ap, Aq = A[:, p].copy(), A[:, q]
            A[:, p] = c * Ap - s * Aq
            A[:, q] = s * Ap + c * Aq
            Ap, Aq = A[p, :].copy(), A[q, :]
            A[p, :] = c[:, None] * Ap - s[:, None] * Aq
            A[q, :] = s[:, None] * Ap + c[:, None] * Aq
            A[p, q] = 0.0
            A[q, p] = 0.0
            Vp, Vq = V[:, p].copy(), V[:, q]
            V[:, p] = c * Vp - s * Vq
            V[:, q] = s * Vp + c * Vq
    else:
        raise np.linalg.LinAlgError("Jacobi iteration did not converge")
    return np.diag(A).copy(), V


def sym_eigen(A, method: str = "jacobi", tol: float = 1e-12, max_sweeps: int = 60) -> SymEigen:
    """Full eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    A : array_like, shape (n, n)
        Symmetric matrix (relative asymmetry at most 1e-12).
    method : {'jacobi', 'lapack'}
        ``'jacobi'`` runs cyclic Jacobi rotations in round-robin order until the
        off-diagonal Frobenius norm drops below ``tol * ||A||_F``. ``'lapack'``
        delegates to :func:`numpy.linalg.eigh`.

    Returns
    -------
    SymEigen
        Eigenvalues in descending order. Each eigenvector is oriented so that
        its largest-magnitude entry is positive. Eigenvalues in
        ``(-1e-10 * lambda_max, 0)`` are clipped to zero.
    """
    A = check_symmetric(A)
    if method == "jacobi":
        w, V = _jacobi(A, tol, max_sweeps)
    elif method == "lapack":
        w, V = np.linalg.eigh(A)
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    if w.size:
        floor = 1e-10 * max(w[0], 0.0)
        w = np.where((w < 0) & (w > -floor), 0.0, w)
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return SymEigen(values=w, vectors=V * signs)


def chol_spd(A) -> np.ndarray:
    """Lower Cholesky factor; raises :class:`NotSPDError` if ``A`` is not SPD."""
    A = check_symmetric(A, rtol=1e-10)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError("matrix is not positive definite") from exc


def spd_solve(A, B) -> np.ndarray:
    L = chol_spd(A)
    B = np.asarray(B, dtype=float)
    y = solve_triangular(L, B, lower=True)
    return solve_triangular(L.T, y, lower=False)


def inv_sqrt_spd(A) -> np.ndarray:
    """Symmetric inverse square root via the eigendecomposition."""
    eig = sym_eigen(A)
    if eig.values[-1] <= 0.0:
        raise NotSPDError("matrix is not positive definite")
    return (eig.vectors / np.sqrt(eig.values)) @ eig.vectors.T


def sqrt_psd(A) -> np.ndarray:
    eig = sym_eigen(A)
    return (eig.vectors * np.sqrt(np.clip(eig.values, 0.0, None))) @ eig.vectors.T


def psd_project(A) -> np.ndarray:
    """Symmetrize and clip negative eigenvalues to zero."""
    A = np.asarray(A, dtype=float)
    eig = sym_eigen(0.5 * (A + A.T), method="lapack")
    return (eig.vectors * np.clip(eig.values, 0.0, None)) @ eig.vectors.T


def trace(A) -> float:
    return float(np.trace(np.asarray(A, dtype=float)))
