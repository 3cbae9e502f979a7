"""Monte Carlo validation: empirical power over replicated datasets, missing
observation sweeps, and theoretical-versus-empirical comparisons.

Replicate ``b`` of a cell always draws from substream ``(b,)`` of the cell's
stream, so results do not depend on worker count or execution order.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from sparsepass.eigengrid import EigenSystem, eigen_from_kernel
from sparsepass.fpca import fpca_fit
from sparsepass.hotelling import hotelling_test
from sparsepass.linalg import NotSPDError
from sparsepass.power import PowerRequest, prepare_power
from sparsepass.probdist import RngStream
from sparsepass.process import CovarianceKernel, MeanDiff, SamplingDesign, generate_dataset
from sparsepass.shrinkage import dataset_scores

log = logging.getLogger(__name__)

HARNESS_MODES = ("known-eigen", "empirical-fpca")
# column prefixes used in grid reports
MODE_TAGS = {"known-eigen": "known", "empirical-fpca": "fpca"}
Z95 = 1.959963984540054
FLAG_ALLOWANCE = 0.05


@dataclass(frozen=True)
class ExperimentCell:
    """One configuration to replicate ``B`` times."""

    kernel: CovarianceKernel
    design: SamplingDesign
    meandiff: MeanDiff
    n1: int
    n2: int
    tau2: float = 0.001
    alpha: float = 0.05
    B: int = 1000
    mode: str = "empirical-fpca"
    pve: float = 0.95
    seed: int = 0
    key: tuple = ()
    R: int = 100
    h_mean: float = 0.1
    h_cov: float = 0.15
    g_source: str = "full"

    def __post_init__(self):
        if self.mode not in HARNESS_MODES:
            raise ValueError(f"mode must be one of {HARNESS_MODES}")
        if self.B < 100:
            raise ValueError("B must be at least 100")
        if self.n1 < 2 or self.n2 < 2:
            raise ValueError("each group needs at least two subjects")

    def stream(self) -> RngStream:
        return RngStream(self.seed, tuple(self.key))


@dataclass
class EmpiricalResult:
    rate: float
    ci_low: float
    ci_high: float
    rejections: int
    successes: int
    failures: int
    B: int
    mode: str
    mean_K: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # the bounds collapse to 0 or 1 at the extremes; avoid rounding residue there
    lo = 0.0 if k == 0 else min(max(0.0, centre - half), p)
    hi = 1.0 if k == n else max(min(1.0, centre + half), p)
    return lo, hi


def _true_eigen(cell: ExperimentCell) -> EigenSystem:
    return eigen_from_kernel(cell.kernel, cell.R, cell.pve, method="lapack")


def run_replicate(cell: ExperimentCell, b: int, eigsys: EigenSystem | None = None):
    """Run replicate ``b``; returns ``(reject, K)`` or ``None`` on estimation failure."""
    gen = cell.stream().substream(b).generator
    data = generate_dataset(gen, cell.n1, cell.n2, cell.meandiff, cell.kernel, cell.design, cell.tau2)
    try:
        if cell.mode == "known-eigen":
            es = eigsys if eigsys is not None else _true_eigen(cell)
            scores = dataset_scores(data, es, cell.tau2, g_source=cell.g_source, kernel=cell.kernel)
            groups = data.groups
        else:
            fit = fpca_fit(data, R=cell.R, pve=cell.pve, h_mean=cell.h_mean, h_cov=cell.h_cov)
            scores, groups = fit.scores, fit.groups
        res = hotelling_test(scores[groups == 1], scores[groups == 2], cell.alpha)
    except (NotSPDError, np.linalg.LinAlgError, ValueError) as exc:
        log.debug("replicate %d failed: %s", b, exc)
        return None
    return res.reject, res.K


def _run_chunk(args):
    cell, indices = args
    es = _true_eigen(cell) if cell.mode == "known-eigen" else None
    return [run_replicate(cell, b, es) for b in indices]


def empirical_power(cell: ExperimentCell, workers: int = 1) -> EmpiricalResult:
    """Rejection rate of the test over ``cell.B`` simulated datasets."""
    indices = list(range(cell.B))
    if workers <= 1:
        outcomes = _run_chunk((cell, indices))
    else:
        chunks = [indices[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, [(cell, c) for c in chunks]))
        outcomes = [None] * cell.B
        for c, part in zip(chunks, parts):
            for b, o in zip(c, part):
                outcomes[b] = o
    ok = [o for o in outcomes if o is not None]
    failures = cell.B - len(ok)
    if failures > 0.01 * cell.B:
        log.warning("%d of %d replicates failed", failures, cell.B)
    rejections = sum(1 for r, _ in ok if r)
    n_ok = len(ok)
    rate = rejections / n_ok if n_ok else float("nan")
    lo, hi = wilson_interval(rejections, n_ok)
    mean_K = float(np.mean([k for _, k in ok])) if ok else float("nan")
    return EmpiricalResult(rate, lo, hi, rejections, n_ok, failures, cell.B, cell.mode, mean_K)


def missing_sweep(req: PowerRequest, p_list, sizes=None) -> list[dict]:
    """Theoretical power for each missing-observation probability in ``p_list``.

    ``sizes`` is a list of ``(n1, n2)``; defaults to the request's own sizes.
    """
    sizes = [req.sizes()] if sizes is None else list(sizes)
    rows = []
    for p in p_list:
        prep = prepare_power(replace(req, design=req.design.with_missing(p)))
        for n1, n2 in sizes:
            r = prep.power(n1, n2)
            rows.append({"missing": float(p), "n": n1 + n2, "n1": n1, "n2": n2, "power": r.power, "se": r.se, "K": r.K})
    return rows


@dataclass
class Comparison:
    label: str
    theoretical: float
    empirical: float
    ci_low: float
    ci_high: float
    gap: float
    flag: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compare(label, theoretical: float, emp: EmpiricalResult, allowance: float = FLAG_ALLOWANCE) -> Comparison:
    """Flag a cell when the gap exceeds the CI half-width plus ``allowance``."""
    gap = theoretical - emp.rate
    half = 0.5 * (emp.ci_high - emp.ci_low)
    return Comparison(str(label), theoretical, emp.rate, emp.ci_low, emp.ci_high, gap, bool(abs(gap) > half + allowance))


def compare_report(theoretical, empirical, labels=None, allowance: float = FLAG_ALLOWANCE) -> list[Comparison]:
    theoretical = list(theoretical)
    empirical = list(empirical)
    if len(theoretical) != len(empirical):
        raise ValueError("theoretical and empirical lists differ in length")
    labels = labels if labels is not None else [str(i) for i in range(len(theoretical))]
    return [compare(l, t, e, allowance) for l, t, e in zip(labels, theoretical, empirical)]


@dataclass
class ExperimentGrid:
    """Factors of a validation table; every cell gets its own substream key."""

    kernel: CovarianceKernel
    design: SamplingDesign
    etas: list
    ns: list
    missing: list = field(default_factory=lambda: [0.0])
    B: int = 1000
    alpha: float = 0.05
    tau2: float = 0.001
    pve: float = 0.95
    modes: list = field(default_factory=list)
    seed: int = 0
    kappa: float = 1.0
    draws: int = 100_000
    S: int = 10_000
    lambda_source: str = "mc"
    R: int = 100

    def __post_init__(self):
        if not self.etas or not self.ns:
            raise ValueError("experiment grid is empty")
        for m in self.modes:
            if m not in HARNESS_MODES:
                raise ValueError(f"unknown harness mode {m!r}")

    def split(self, n: int) -> tuple[int, int]:
        n2 = int(round(n / (1.0 + self.kappa)))
        return n - n2, n2


def run_grid(grid: ExperimentGrid, workers: int = 1) -> list[dict]:
    """Theoretical and (optionally) empirical power for every table cell."""
    rows = []
    for ie, eta in enumerate(grid.etas):
        md = MeanDiff.cubic(eta)
        for ip, p in enumerate(grid.missing):
            design = grid.design.with_missing(p)
            req = PowerRequest(
                md, design, kernel=grid.kernel, tau2=grid.tau2, alpha=grid.alpha, pve=grid.pve,
                kappa=grid.kappa, M=grid.draws, seed=grid.seed, lambda_source=grid.lambda_source,
                S=grid.S, R=grid.R,
            )
            prep = prepare_power(req)
            for i_n, n in enumerate(grid.ns):
                n1, n2 = grid.split(n)
                th = prep.power(n1, n2)
                row = {"eta": float(eta), "missing": float(p), "n": int(n), "n1": n1, "n2": n2,
                       "K": th.K, "theoretical": th.power, "se": th.se}
                for im, mode in enumerate(grid.modes):
                    cell = ExperimentCell(
                        grid.kernel, design, md, n1, n2, grid.tau2, grid.alpha, grid.B, mode, grid.pve,
                        grid.seed, (3, ie, ip, i_n, im), grid.R,
                    )
                    emp = empirical_power(cell, workers)
                    c = compare("", th.power, emp)
                    tag = MODE_TAGS[mode]
                    row.update({
                        f"{tag}_empirical": emp.rate, f"{tag}_ci_low": emp.ci_low, f"{tag}_ci_high": emp.ci_high,
                        f"{tag}_failures": emp.failures, f"{tag}_gap": c.gap, f"{tag}_flag": c.flag,
                    })
                rows.append(row)
    return rows
