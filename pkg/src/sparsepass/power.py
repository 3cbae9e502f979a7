"""Power and sample size for the two-sample test on shrinkage scores.

The statistic's alternative distribution is approximated, conditional on K,
by a ratio of a weighted sum of one-degree-of-freedom noncentral chi-squared
variables to an independent scaled chi-squared variable whose degrees of
freedom come from a single-Wishart approximation to the sum of two Wisharts
with unequal scales. Power is estimated by Monte Carlo over that variate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from sparsepass.eigengrid import EigenSystem, eigen_from_kernel, project_meandiff
from sparsepass.fpca import fpca_fit
from sparsepass.linalg import NotSPDError, chol_spd, inv_sqrt_spd, sym_eigen, trace
from sparsepass.probdist import (
    RngStream,
    as_generator,
    chi2_quantile,
    chisq_sample,
    f_quantile,
    noncentral_chisq1_sample,
)
from sparsepass.process import CovarianceKernel, GridKernel, MeanDiff, SamplingDesign, generate_dataset
from sparsepass.shrinkage import score_cov_empirical, score_cov_mc_groups

log = logging.getLogger(__name__)

MODES = ("exact", "asymptotic")
LAMBDA_SOURCES = ("mc", "synthetic-fpca")
DEFAULT_DRAWS = 100_000
MIN_DRAWS = 1000


class UnreachableTargetError(RuntimeError):
    """Target power not reached below the configured maximum sample size."""


@dataclass(frozen=True)
class NonNullSpec:
    """Parameters of the alternative distribution at one ``(n1, n2)``."""

    delta: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    kappa: float
    n2: float
    Ldag_isqrt: np.ndarray
    Omega: np.ndarray
    Omega_dag: np.ndarray
    d: np.ndarray
    U: np.ndarray
    ncp: np.ndarray
    nu: float

    @property
    def K(self) -> int:
        return int(self.delta.size)

    @property
    def n1(self) -> float:
        return self.kappa * self.n2

    @property
    def n(self) -> float:
        return self.n1 + self.n2


def _check_inputs(delta, L1, L2):
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    K = delta.size
    L1 = np.atleast_2d(np.asarray(L1, dtype=float))
    L2 = np.atleast_2d(np.asarray(L2, dtype=float))
    if L1.shape != (K, K) or L2.shape != (K, K):
        raise ValueError("delta, L1 and L2 dimensions disagree")
    for name, L in (("L1", L1), ("L2", L2)):
        try:
            chol_spd(L)
        except NotSPDError as exc:
            raise NotSPDError(f"{name} is not symmetric positive definite") from exc
    return delta, 0.5 * (L1 + L1.T), 0.5 * (L2 + L2.T)


def build_nonnull(delta, L1, L2, kappa: float, n2: float) -> NonNullSpec:
    """Derive the weights, noncentralities and denominator df for ``n1 = kappa * n2``."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if n2 < 2:
        raise ValueError("n2 must be at least 2")
    delta, L1, L2 = _check_inputs(delta, L1, L2)
    K = delta.size
    I = np.eye(K)
    Ldag = L1 + kappa * L2
    Lis = inv_sqrt_spd(Ldag)
    Om = Lis @ L1 @ Lis
    Om = 0.5 * (Om + Om.T)
    w = np.linalg.eigvalsh(Om)
    if w[0] < -1e-8 or w[-1] > 1 + 1e-8:
        raise ValueError("Omega eigenvalues outside [0, 1]")
    a = kappa * (kappa - 1.0 / n2)
    b = 1.0 - 1.0 / n2
    Od = a * Om + b * (I - Om)
    Od = 0.5 * (Od + Od.T)
    J = I - Om
    num = n2 * (trace(Od @ Od) + trace(Od) ** 2)
    den = kappa**2 * (kappa - 1.0 / n2) * (trace(Om @ Om) + trace(Om) ** 2) + b * (
        trace(J @ J) + trace(J) ** 2
    )
    nu = float(num / den)
    if not nu > K - 1:
        raise ValueError(f"denominator degrees of freedom {nu - K + 1:.3g} not positive")
    eig = sym_eigen(Od, method="lapack")
    d = eig.values
    if np.any(d <= 0):
        raise ValueError("non-positive mixture weight; n2 too small for kappa")
    ncp = kappa * n2 * (eig.vectors.T @ Lis @ delta) ** 2
    return NonNullSpec(delta, L1, L2, float(kappa), float(n2), Lis, Om, Od, d, eig.vectors, ncp, nu)


def sample_nonnull(rng, spec: NonNullSpec, M: int) -> np.ndarray:
    """``M`` draws of ``sum_k chi2_1(ncp_k) / d_k`` over ``chi2_{nu-K+1} / nu``."""
    if M < MIN_DRAWS:
        raise ValueError(f"need at least {MIN_DRAWS} draws")
    gen = as_generator(rng)
    num = np.zeros(M)
    for dk, ck in zip(spec.d, spec.ncp):
        num += noncentral_chisq1_sample(gen, ck, M) / dk
    den = chisq_sample(gen, spec.nu - spec.K + 1, M) / spec.nu
    return num / den


def power_threshold(K: int, n1: float, n2: float, alpha: float) -> float:
    """Critical value of the scaled statistic ``n2 (1 + 1/kappa) T / (n - 2)``."""
    n = n1 + n2
    if n - K - 1 < 1:
        raise ValueError("K must be below n - 1")
    kappa = n1 / n2
    return K * n2 * (1.0 + 1.0 / kappa) * f_quantile(1.0 - alpha, K, n - K - 1) / (n - K - 1)


@dataclass
class PowerResult:
    power: float
    se: float
    K: int
    delta: list
    threshold: float
    n1: float
    n2: float
    alpha: float
    M: int
    mode: str = "exact"
    nu: float | None = None
    lambdas: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _result(draws, threshold, spec_delta, K, n1, n2, alpha, mode, nu=None):
    M = draws.size
    p = float(np.mean(draws > threshold))
    return PowerResult(
        power=p,
        se=math.sqrt(p * (1.0 - p) / M),
        K=int(K),
        delta=[float(x) for x in spec_delta],
        threshold=float(threshold),
        n1=float(n1),
        n2=float(n2),
        alpha=float(alpha),
        M=int(M),
        mode=mode,
        nu=None if nu is None else float(nu),
    )


def power_from_spec(rng, spec: NonNullSpec, alpha: float = 0.05, M: int = DEFAULT_DRAWS) -> PowerResult:
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    thr = power_threshold(spec.K, spec.n1, spec.n2, alpha)
    draws = sample_nonnull(rng, spec, M)
    return _result(draws, thr, spec.delta, spec.K, spec.n1, spec.n2, alpha, "exact", spec.nu)


def asymptotic_power(rng, delta, L1, L2, kappa: float, alpha: float = 0.05, M: int = DEFAULT_DRAWS) -> PowerResult:
    """Large-sample power with ``delta`` already on the root-n scale.

    The statistic converges to ``kappa * sum_k chi2_1(c_k) / d_k`` where ``d_k``
    are the eigenvalues of ``I + (kappa^2 - 1) Omega``; the critical value is
    the chi-squared(K) quantile.
    """
    if M < MIN_DRAWS:
        raise ValueError(f"need at least {MIN_DRAWS} draws")
    delta, L1, L2 = _check_inputs(delta, L1, L2)
    K = delta.size
    Lis = inv_sqrt_spd(L1 + kappa * L2)
    Om = Lis @ L1 @ Lis
    Od = np.eye(K) + (kappa**2 - 1.0) * 0.5 * (Om + Om.T)
    eig = sym_eigen(Od, method="lapack")
    c = (eig.vectors.T @ Lis @ delta) ** 2
    gen = as_generator(rng)
    draws = np.zeros(M)
    for dk, ck in zip(eig.values, c):
        draws += noncentral_chisq1_sample(gen, ck, M) / dk
    draws *= kappa
    thr = chi2_quantile(1.0 - alpha, K)
    return _result(draws, thr, delta, K, math.nan, math.nan, alpha, "asymptotic")


# ---------------------------------------------------------------------------
# end-to-end power from a data-generating model


@dataclass(frozen=True)
class PowerRequest:
    """Everything needed to turn a model and a design into power.

    Either ``kernel`` or ``eigsys`` must be supplied. ``n1`` defaults to
    ``ceil(kappa * n2)``. With ``lambda_source='mc'`` the score covariances are
    Monte Carlo averages over ``S`` design draws under the true eigensystem;
    with ``'synthetic-fpca'`` a synthetic dataset of ``n_big`` subjects per
    group is generated, fitted by sparse fPCA, and the empirical score
    covariances are used. The synthetic fit uses narrower bandwidths than the
    fPCA defaults because ``n_big`` is large.
    """

    meandiff: MeanDiff
    design: SamplingDesign
    kernel: CovarianceKernel | None = None
    eigsys: EigenSystem | None = None
    tau2: float = 0.001
    alpha: float = 0.05
    pve: float = 0.95
    n2: int | None = None
    n1: int | None = None
    kappa: float = 1.0
    M: int = DEFAULT_DRAWS
    seed: int = 0
    mode: str = "exact"
    lambda_source: str = "mc"
    S: int = 10_000
    R: int = 100
    g_source: str = "full"
    n_big: int = 10_000
    h_mean: float = 0.05
    h_cov: float = 0.05
    max_k: int = 20

    def __post_init__(self):
        if self.kernel is None and self.eigsys is None:
            raise ValueError("supply a kernel or an eigensystem")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.lambda_source not in LAMBDA_SOURCES:
            raise ValueError(f"lambda_source must be one of {LAMBDA_SOURCES}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.tau2 < 0:
            raise ValueError("tau2 must be non-negative")
        if self.M < MIN_DRAWS:
            raise ValueError(f"M must be at least {MIN_DRAWS}")

    def sizes(self, n2: int | None = None) -> tuple[int, int]:
        n2 = self.n2 if n2 is None else n2
        if n2 is None:
            raise ValueError("sample size n2 not set")
        n1 = self.n1 if (self.n1 is not None and n2 == self.n2) else math.ceil(self.kappa * n2 - 1e-9)
        return int(n1), int(n2)


@dataclass
class PreparedPower:
    """Sample-size independent ingredients: eigensystem, projections, score covariances."""

    request: PowerRequest
    eigsys: EigenSystem
    delta: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    tau2_used: float

    @property
    def K(self) -> int:
        return self.eigsys.K

    def power(self, n1: int, n2: int, M: int | None = None) -> PowerResult:
        """Power at ``(n1, n2)``; every call reuses the same draw stream."""
        req = self.request
        M = req.M if M is None else M
        draw_rng = RngStream(req.seed).substream(2)
        if req.mode == "asymptotic":
            res = asymptotic_power(draw_rng, math.sqrt(n1) * self.delta, self.L1, self.L2, n1 / n2, req.alpha, M)
            res.n1, res.n2 = float(n1), float(n2)
            res.delta = [float(x) for x in self.delta]
        else:
            spec = build_nonnull(self.delta, self.L1, self.L2, n1 / n2, n2)
            res = power_from_spec(draw_rng, spec, req.alpha, M)
        res.lambdas = [float(x) for x in self.eigsys.values]
        return res


def _kernel_of(req: PowerRequest) -> CovarianceKernel:
    if req.kernel is not None:
        return req.kernel
    es = req.eigsys
    return GridKernel(es.grid, es.covariance(es.grid))


def prepare_power(req: PowerRequest) -> PreparedPower:
    """Steps that do not depend on the sample size."""
    root = RngStream(req.seed)
    if req.lambda_source == "mc":
        es = req.eigsys if req.eigsys is not None else eigen_from_kernel(req.kernel, req.R, req.pve, req.max_k)
        delta = project_meandiff(es, req.meandiff)
        offset = None if req.meandiff.is_zero else req.meandiff
        L1, L2 = score_cov_mc_groups(
            root.substream(1), es, req.design, [None, offset], req.tau2, req.S, req.g_source, req.kernel
        )
        return PreparedPower(req, es, delta, L1, L2, req.tau2)
    data = generate_dataset(
        root.substream(1), req.n_big, req.n_big, req.meandiff, _kernel_of(req), req.design, req.tau2
    )
    fit = fpca_fit(
        data, R=req.R, pve=req.pve, h_mean=req.h_mean, h_cov=req.h_cov, max_k=req.max_k, pve_denominator="raw"
    )
    L1, L2, _ = score_cov_empirical(fit.scores[fit.groups == 1], fit.scores[fit.groups == 2])
    delta = project_meandiff(fit.eigsys, req.meandiff)
    return PreparedPower(req, fit.eigsys, delta, L1, L2, fit.tau2)


def algorithm1_power(req: PowerRequest, prepared: PreparedPower | None = None) -> PowerResult:
    """Power of the test for the request's model, design and sample sizes."""
    prep = prepared if prepared is not None else prepare_power(req)
    n1, n2 = req.sizes()
    return prep.power(n1, n2)


@dataclass
class SampleSizeResult:
    n1: int
    n2: int
    power: float
    power_below: float | None
    target: float
    K: int
    evaluations: dict

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n"] = self.n
        out["evaluations"] = {str(k): v for k, v in sorted(self.evaluations.items())}
        return out


def algorithm2_samplesize(
    req: PowerRequest,
    target: float,
    n_max: int = 100_000,
    prepared: PreparedPower | None = None,
) -> SampleSizeResult:
    """Smallest ``n2`` (with ``n1 = ceil(kappa n2)``) whose power exceeds ``target``.

    Doubling brackets the answer, bisection narrows it, and a downward scan
    confirms that ``n2 - 1`` does not already exceed the target. All
    candidates share one random-number stream.
    """
    if not req.alpha < target < 1.0:
        raise ValueError("target power must lie in (alpha, 1)")
    prep = prepared if prepared is not None else prepare_power(req)
    K = prep.K
    kappa = req.kappa
    floor = 3
    while floor + math.ceil(kappa * floor - 1e-9) - K - 1 < 1 or kappa * floor <= 1:
        floor += 1
    cache: dict[int, float] = {}

    def pw(n2: int) -> float:
        if n2 not in cache:
            n1 = math.ceil(kappa * n2 - 1e-9)
            cache[n2] = prep.power(n1, n2).power
        return cache[n2]

    lo = None
    hi = floor
    while pw(hi) <= target:
        lo = hi
        hi *= 2
        if hi > n_max:
            if pw(n_max) > target:
                hi = n_max
                break
            raise UnreachableTargetError(f"power stays at or below {target} up to n2 = {n_max}")
    if lo is None:
        n_star = floor
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if pw(mid) > target:
                hi = mid
            else:
                lo = mid
        n_star = hi
    while n_star > floor and pw(n_star - 1) > target:
        n_star -= 1
    below = pw(n_star - 1) if n_star > floor else None
    n1 = math.ceil(kappa * n_star - 1e-9)
    evaluations = {k: cache[k] for k in sorted(cache)}
    return SampleSizeResult(n1, n_star, pw(n_star), below, target, K, evaluations)


def with_sizes(req: PowerRequest, n1: int | None, n2: int) -> PowerRequest:
    return replace(req, n1=n1, n2=n2)
