"""Two-sample Hotelling T^2 test on shrinkage scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from sparsepass.linalg import NotSPDError, spd_solve
from sparsepass.probdist import chi2_cdf, chi2_quantile, f_quantile, scaled_f_pvalue
from sparsepass.shrinkage import score_cov_empirical


class SingularCovarianceError(NotSPDError):
    """The pooled score covariance cannot be inverted (K too large for n?)."""


@dataclass(frozen=True)
class TestResult:
    T: float
    K: int
    n1: int
    n2: int
    threshold: float
    p_value: float
    reject: bool
    alpha: float
    rule: str = "f"

    __test__ = False  # keep pytest from collecting this class

    def to_dict(self) -> dict:
        return asdict(self)


def hotelling_statistic(scores1, scores2) -> float:
    s1, s2 = _as_scores(scores1), _as_scores(scores2)
    n1, n2 = s1.shape[0], s2.shape[0]
    K = s1.shape[1]
    if s2.shape[1] != K:
        raise ValueError("score dimensions differ between groups")
    if n1 < 2 or n2 < 2 or n1 + n2 < K + 2:
        raise ValueError("need n1, n2 >= 2 and n1 + n2 >= K + 2")
    _, _, pooled = score_cov_empirical(s1, s2)
    diff = s1.mean(axis=0) - s2.mean(axis=0)
    try:
        x = spd_solve(pooled, diff)
    except NotSPDError as exc:
        raise SingularCovarianceError("pooled score covariance is singular") from exc
    return float(n1 * n2 / (n1 + n2) * diff @ x)


def rejection_threshold(K: int, n: int, alpha: float) -> float:
    """Critical value ``(n-2)K/(n-K-1) * F_alpha(K, n-K-1)`` for the statistic."""
    if n - K - 1 < 1:
        raise ValueError("need n - K - 1 >= 1")
    return (n - 2) * K / (n - K - 1) * f_quantile(1.0 - alpha, K, n - K - 1)


def test_decision(T: float, K: int, n1: int, n2: int, alpha: float = 0.05, rule: str = "f") -> TestResult:
    """Apply the finite-sample F rule (default) or the chi-squared(K) large-sample rule."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    n = n1 + n2
    if rule == "f":
        threshold = rejection_threshold(K, n, alpha)
        p = scaled_f_pvalue(T, K, n)
    elif rule == "chi2":
        threshold = chi2_quantile(1.0 - alpha, K)
        p = 1.0 - chi2_cdf(T, K)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    reject = bool(T > threshold)
    # at the boundary the p-value can round to the wrong side of alpha
    if reject and p >= alpha:
        p = float(np.nextafter(alpha, 0.0))
    elif not reject and p < alpha:
        p = alpha
    return TestResult(float(T), int(K), int(n1), int(n2), float(threshold), float(p), reject, alpha, rule)


def _as_scores(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def hotelling_test(scores1, scores2, alpha: float = 0.05, rule: str = "f") -> TestResult:
    s1, s2 = _as_scores(scores1), _as_scores(scores2)
    T = hotelling_statistic(s1, s2)
    return test_decision(T, s1.shape[1], s1.shape[0], s2.shape[0], alpha, rule)
