"""Distribution functions and samplers: normal, chi-squared, noncentral
chi-squared with one degree of freedom, F, and multivariate normal.

The F and chi-squared CDFs are computed from regularized incomplete beta and
gamma functions so that non-integer degrees of freedom are supported.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from sparsepass.linalg import sym_eigen

_EPS = 1e-15
_TINY = 1e-300


class RngStream:
    """Seeded random stream with deterministic, order-independent substreams.

    ``RngStream(seed).substream(i)`` always yields the same generator for the
    same ``(seed, i)``, no matter how many draws were taken from the parent or
    from sibling substreams.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def substream(self, *index: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(index))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.key})"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    raise TypeError(f"cannot use {type(rng).__name__} as a random stream")


# ---------------------------------------------------------------------------
# special functions


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def gammainc(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x)."""
    if a <= 0:
        raise ValueError("gamma shape must be positive")
    if x <= 0.0:
        return 0.0
    log_front = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        ap = a
        for _ in range(100000):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * _EPS:
                return total * math.exp(log_front)
        raise ArithmeticError("incomplete gamma series did not converge")
    # continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 100000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return 1.0 - math.exp(log_front) * h
    raise ArithmeticError("incomplete gamma continued fraction did not converge")


def f_cdf(x: float, d1: float, d2: float) -> float:
    if d1 <= 0 or d2 <= 0:
        raise ValueError("degrees of freedom must be positive")
    if x <= 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    # pass the smaller of z and 1 - z to the beta function to avoid cancellation
    z = d1 * x / (d1 * x + d2)
    if z <= 0.5:
        return betainc(0.5 * d1, 0.5 * d2, z)
    return 1.0 - betainc(0.5 * d2, 0.5 * d1, d2 / (d1 * x + d2))


def f_sf(x: float, d1: float, d2: float) -> float:
    """Upper tail of the F distribution, computed without cancellation."""
    if d1 <= 0 or d2 <= 0:
        raise ValueError("degrees of freedom must be positive")
    if x <= 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    w = d2 / (d1 * x + d2)
    if w <= 0.5:
        return betainc(0.5 * d2, 0.5 * d1, w)
    return 1.0 - betainc(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2))


def f_pdf(x: float, d1: float, d2: float) -> float:
    if x <= 0.0:
        return 0.0
    logp = (
        0.5 * d1 * math.log(d1) + 0.5 * d2 * math.log(d2) + (0.5 * d1 - 1.0) * math.log(x)
        - 0.5 * (d1 + d2) * math.log(d1 * x + d2)
        - (math.lgamma(0.5 * d1) + math.lgamma(0.5 * d2) - math.lgamma(0.5 * (d1 + d2)))
    )
    return math.exp(logp)


def chi2_cdf(x: float, df: float) -> float:
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    return gammainc(0.5 * df, 0.5 * x) if x > 0 else 0.0


def chi2_pdf(x: float, df: float) -> float:
    if x <= 0.0:
        return 0.0
    k = 0.5 * df
    return math.exp((k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k))


def _invert_cdf(
    cdf: Callable[[float], float],
    pdf: Callable[[float], float],
    p: float,
    x0: float,
    hi: float = 1e8,
) -> float:
    """Newton iterations on cdf(x) = p, falling back to bisection on (0, hi)."""
    lo = 0.0
    x = min(max(x0, 1e-12), hi)
    for _ in range(400):
        err = cdf(x) - p
        if abs(err) <= 1e-15:
            return x
        if err > 0:
            hi = x
        else:
            lo = x
        dens = pdf(x)
        step_ok = False
        if dens > 0:
            xn = x - err / dens
            if lo < xn < hi:
                step_ok = True
        if not step_ok:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 1e-15 * abs(x):
            return xn
        x = xn
    return x


def f_quantile(p: float, d1: float, d2: float) -> float:
    """Value ``x`` with ``F_cdf(x; d1, d2) = p``."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    if d1 <= 0 or d2 <= 0:
        raise ValueError("degrees of freedom must be positive")
    return _invert_cdf(lambda x: f_cdf(x, d1, d2), lambda x: f_pdf(x, d1, d2), p, 1.0)


def chi2_quantile(p: float, df: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    return _invert_cdf(lambda x: chi2_cdf(x, df), lambda x: chi2_pdf(x, df), p, df)


def scaled_f_pvalue(T: float, K: int, n: int) -> float:
    """P-value of a two-sample Hotelling statistic under its exact F null."""
    if n - K - 1 < 1:
        raise ValueError("need n - K - 1 >= 1")
    return f_sf(T * (n - K - 1) / ((n - 2) * K), K, n - K - 1)


# ---------------------------------------------------------------------------
# samplers


def chisq_sample(rng, df: float, size=None):
    """Chi-squared draws with real-valued ``df`` (gamma(df/2, scale 2))."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    return 2.0 * as_generator(rng).standard_gamma(0.5 * df, size=size)


def noncentral_chisq1_sample(rng, ncp: float, size=None):
    """Noncentral chi-squared with one degree of freedom, as (Z + sqrt(ncp))^2."""
    if ncp < 0:
        raise ValueError("noncentrality must be non-negative")
    z = as_generator(rng).standard_normal(size=size)
    return (z + math.sqrt(ncp)) ** 2


def mvn_sample(rng, mean, cov, size=None) -> np.ndarray:
    """Multivariate normal draws; PSD covariances are handled by eigenvalue clipping."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    eig = sym_eigen(cov)
    factor = eig.vectors * np.sqrt(np.clip(eig.values, 0.0, None))
    shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
    z = as_generator(rng).standard_normal(size=shape + (mean.size,))
    return mean + z @ factor.T
