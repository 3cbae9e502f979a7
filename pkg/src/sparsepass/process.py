"""Mean differences, covariance kernels, sampling designs and synthetic
sparse functional datasets.

Group 1 has mean zero and group 2 has mean ``eta(t)``; trajectories are
drawn exactly from the joint normal law at each subject's observation times
and observed with additive ``N(0, tau2)`` noise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from sparsepass.probdist import as_generator

CSV_HEADER = ("subject_id", "group", "time", "value")


class DataFormatError(ValueError):
    """Malformed or unusable input data."""


def _check_domain(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > 1.0) or not np.all(np.isfinite(t)):
        raise ValueError("time points must lie in [0, 1]")
    return t


# ---------------------------------------------------------------------------
# mean difference


@dataclass(frozen=True)
class MeanDiff:
    """Group mean difference ``eta(t)``.

    ``kind`` is ``'polynomial'`` (``coefficients`` in increasing powers of t),
    ``'piecewise'`` (linear interpolation through ``knots``/``values``) or
    ``'zero'``.
    """

    kind: str = "zero"
    coefficients: tuple[float, ...] = ()
    knots: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("polynomial", "piecewise", "zero"):
            raise ValueError(f"unknown mean difference kind {self.kind!r}")
        if self.kind == "piecewise":
            if len(self.knots) < 2 or len(self.knots) != len(self.values):
                raise ValueError("piecewise mean difference needs matching knots and values")
            if np.any(np.diff(self.knots) <= 0):
                raise ValueError("knots must be strictly increasing")

    @classmethod
    def cubic(cls, eta: float) -> "MeanDiff":
        """The ``eta * t**3`` family used throughout the simulation tables."""
        return cls("polynomial", coefficients=(0.0, 0.0, 0.0, float(eta)))

    def scaled(self, factor: float) -> "MeanDiff":
        if self.kind == "zero":
            return self
        return MeanDiff(
            self.kind,
            coefficients=tuple(factor * c for c in self.coefficients),
            knots=self.knots,
            values=tuple(factor * v for v in self.values),
        )

    @property
    def is_zero(self) -> bool:
        if self.kind == "zero":
            return True
        vals = self.coefficients if self.kind == "polynomial" else self.values
        return all(v == 0.0 for v in vals)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(t)
        if self.kind == "polynomial":
            out = np.zeros_like(t)
            for c in reversed(self.coefficients):
                out = out * t + c
            return out
        return np.interp(t, self.knots, self.values)


# ---------------------------------------------------------------------------
# covariance kernels


class CovarianceKernel:
    """Base class; subclasses implement ``_eval(s, t)`` on broadcast arrays."""

    name = "kernel"

    def __call__(self, s, t):
        s, t = np.broadcast_arrays(_check_domain(s), _check_domain(t))
        return self._eval(s, t)

    def matrix(self, times, other=None) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        other = times if other is None else np.asarray(other, dtype=float)
        return self(times[..., :, None], other[..., None, :])

    def _eval(self, s, t):
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class CompoundSymmetry(CovarianceKernel):
    sigma2: float = 1.0
    rho: float = 0.5
    name = "cs"

    def __post_init__(self):
        if self.sigma2 <= 0 or not 0.0 <= self.rho <= 1.0:
            raise ValueError("compound symmetry needs sigma2 > 0 and rho in [0, 1]")

    def _eval(self, s, t):
        return self.sigma2 * (self.rho + (1.0 - self.rho) * (s == t))

    def to_config(self):
        return {"type": "cs", "sigma2": self.sigma2, "rho": self.rho}


@dataclass(frozen=True)
class CAR1(CovarianceKernel):
    """Continuous autoregressive kernel ``sigma2 * base**|t - s|``."""

    sigma2: float = 1.0
    base: float = 0.5
    name = "car1"

    def __post_init__(self):
        if self.sigma2 <= 0 or not 0.0 < self.base < 1.0:
            raise ValueError("CAR(1) needs sigma2 > 0 and base in (0, 1)")

    def _eval(self, s, t):
        return self.sigma2 * self.base ** np.abs(s - t)

    def to_config(self):
        return {"type": "car1", "sigma2": self.sigma2, "base": self.base}


@dataclass(frozen=True)
class NonStationaryRank2(CovarianceKernel):
    """Covariance of ``a*sqrt(2)sin(2 pi t) + b*sqrt(2)cos(2 pi t)``,
    with ``var(a) = v1`` and ``var(b) = v2``."""

    v1: float = 1.0
    v2: float = 0.5
    name = "nonstat2"

    def basis(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        r2 = math.sqrt(2.0)
        return np.stack([r2 * np.sin(2 * np.pi * t), r2 * np.cos(2 * np.pi * t)], axis=-1)

    def _eval(self, s, t):
        bs, bt = self.basis(s), self.basis(t)
        return self.v1 * bs[..., 0] * bt[..., 0] + self.v2 * bs[..., 1] * bt[..., 1]

    def to_config(self):
        return {"type": "nonstat2", "v1": self.v1, "v2": self.v2}


class GridKernel(CovarianceKernel):
    """Kernel defined by a symmetric PSD matrix on a grid; bilinear in between."""

    name = "grid"

    def __init__(self, grid, cov):
        grid = np.asarray(grid, dtype=float)
        cov = np.asarray(cov, dtype=float)
        if cov.shape != (grid.size, grid.size):
            raise ValueError("covariance matrix must match the grid")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.max(np.abs(cov - cov.T)) > 1e-10 * max(np.max(np.abs(cov)), 1e-300):
            raise ValueError("grid covariance must be symmetric")
        self.grid = grid
        self.cov = 0.5 * (cov + cov.T)

    def _weights(self, x):
        g = self.grid
        x = np.clip(x, g[0], g[-1])
        i = np.clip(np.searchsorted(g, x, side="right") - 1, 0, g.size - 2)
        w = (x - g[i]) / (g[i + 1] - g[i])
        return i, w

    def _eval(self, s, t):
        i, a = self._weights(s)
        j, b = self._weights(t)
        C = self.cov
        return (
            (1 - a) * (1 - b) * C[i, j]
            + a * (1 - b) * C[i + 1, j]
            + (1 - a) * b * C[i, j + 1]
            + a * b * C[i + 1, j + 1]
        )

    def to_config(self):
        return {"type": "grid", "grid": self.grid.tolist(), "matrix": self.cov.tolist()}


def kernel_eval(kernel: CovarianceKernel, t: float, t2: float) -> float:
    return float(kernel(t, t2))


def kernel_from_config(cfg: dict) -> CovarianceKernel:
    cfg = dict(cfg)
    kind = cfg.pop("type", None)
    builders = {
        "cs": CompoundSymmetry,
        "car1": CAR1,
        "nonstat2": NonStationaryRank2,
    }
    if kind == "grid":
        return GridKernel(cfg.pop("grid"), cfg.pop("matrix"))
    if kind not in builders:
        raise ValueError(f"unknown kernel type {kind!r}")
    return builders[kind](**cfg)


# ---------------------------------------------------------------------------
# sampling design


def apply_missingness(rng, schedule, p: float, floor: int = 1) -> np.ndarray:
    """Keep each scheduled point independently with probability ``1 - p``.

    If fewer than ``floor`` points survive, the thinning is redrawn.
    """
    schedule = np.asarray(schedule, dtype=float)
    if not 0.0 <= p < 1.0:
        raise ValueError("missing probability must lie in [0, 1)")
    if p == 0.0:
        return schedule
    floor = min(floor, schedule.size)
    gen = as_generator(rng)
    while True:
        keep = gen.random(schedule.size) >= p
        if keep.sum() >= floor:
            return schedule[keep]


@dataclass(frozen=True)
class SamplingDesign:
    """How many observations each subject gets and when.

    ``counts`` is either a single integer or a set of integers drawn
    uniformly. With ``schedule`` set, every subject is scheduled at those
    visit times (rescaled affinely onto [0, 1]) and ``counts`` is ignored;
    otherwise times are i.i.d. uniform on [0, 1]. ``missing`` thins each
    scheduled point independently.
    """

    counts: tuple[int, ...] = (8,)
    schedule: tuple[float, ...] | None = None
    missing: float = 0.0
    min_obs: int = 1

    def __post_init__(self):
        if isinstance(self.counts, (int, np.integer)):
            object.__setattr__(self, "counts", (int(self.counts),))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if not self.counts or min(self.counts) < 1:
            raise ValueError("observation counts must be positive integers")
        if not 0.0 <= self.missing < 1.0:
            raise ValueError("missing probability must lie in [0, 1)")
        if self.min_obs < 1:
            raise ValueError("min_obs must be at least 1")
        if self.schedule is not None:
            sched = np.asarray(self.schedule, dtype=float)
            if sched.size < 1 or np.any(np.diff(sched) <= 0):
                raise ValueError("schedule must be strictly increasing")
            span = sched[-1] - sched[0]
            scaled = (sched - sched[0]) / span if span > 0 else np.full_like(sched, 0.5)
            object.__setattr__(self, "schedule", tuple(float(x) for x in scaled))

    @property
    def is_fixed(self) -> bool:
        """True when every subject gets the same times (no randomness at all)."""
        return self.schedule is not None and self.missing == 0.0

    def with_missing(self, p: float) -> "SamplingDesign":
        return SamplingDesign(self.counts, self.schedule, p, self.min_obs)

    def draw_times(self, rng) -> np.ndarray:
        gen = as_generator(rng)
        if self.schedule is not None:
            sched = np.asarray(self.schedule)
        else:
            m = self.counts[0] if len(self.counts) == 1 else int(gen.choice(self.counts))
            sched = np.sort(gen.random(m))
        return apply_missingness(gen, sched, self.missing, self.min_obs)

    def to_config(self) -> dict:
        cfg = {"counts": list(self.counts), "missing": self.missing}
        if self.schedule is not None:
            cfg["schedule"] = list(self.schedule)
        return cfg


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Subject:
    id: str
    group: int
    times: np.ndarray
    values: np.ndarray


@dataclass
class SparseDataset:
    subjects: list[Subject]
    tau2: float | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.subjects)

    @property
    def groups(self) -> np.ndarray:
        return np.array([s.group for s in self.subjects], dtype=int)

    def group_sizes(self) -> tuple[int, int]:
        g = self.groups
        return int(np.sum(g == 1)), int(np.sum(g == 2))

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        t = np.concatenate([s.times for s in self.subjects])
        y = np.concatenate([s.values for s in self.subjects])
        return t, y

    def validate(self, two_sample: bool = True) -> None:
        for s in self.subjects:
            if len(s.times) != len(s.values):
                raise DataFormatError(f"subject {s.id}: times and values differ in length")
            if len(s.times) == 0:
                raise DataFormatError(f"subject {s.id} has no observations")
            if s.group not in (1, 2):
                raise DataFormatError(f"subject {s.id}: group must be 1 or 2")
        if two_sample:
            n1, n2 = self.group_sizes()
            if n1 == 0 or n2 == 0:
                raise DataFormatError("both groups need at least one subject")


def _psd_factors(C: np.ndarray) -> np.ndarray:
    """Batched symmetric square-root factors L with L L^T = C (PSD clipped)."""
    w, V = np.linalg.eigh(C)
    top = np.max(w, axis=-1, keepdims=True)
    if np.any(w < -1e-8 * np.maximum(top, 1e-300)):
        raise np.linalg.LinAlgError("kernel is not positive semidefinite at the drawn times")
    return V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]


def generate_dataset(
    rng,
    n1: int,
    n2: int,
    meandiff: MeanDiff,
    kernel: CovarianceKernel,
    design: SamplingDesign,
    tau2: float,
) -> SparseDataset:
    """Simulate a two-group sparse dataset with exact Gaussian trajectories."""
    if n1 < 1 or n2 < 1:
        raise ValueError("both groups need at least one subject")
    if tau2 < 0:
        raise ValueError("tau2 must be non-negative")
    gen = as_generator(rng)
    n = n1 + n2
    groups = np.r_[np.ones(n1, dtype=int), np.full(n2, 2, dtype=int)]
    times = [design.draw_times(gen) for _ in range(n)]
    values: list[np.ndarray | None] = [None] * n
    counts = np.array([t.size for t in times])
    for m in np.unique(counts):
        idx = np.flatnonzero(counts == m)
        T = np.stack([times[i] for i in idx])
        if isinstance(kernel, NonStationaryRank2):
            # finite expansion is exact here and avoids factorizing a rank-2 matrix
            L = kernel.basis(T) * np.sqrt([kernel.v1, kernel.v2])
            z = gen.standard_normal((idx.size, 2))
        else:
            L = _psd_factors(kernel.matrix(T))
            z = gen.standard_normal((idx.size, m))
        eps = gen.standard_normal((idx.size, m)) * math.sqrt(tau2)
        X = np.einsum("nij,nj->ni", L, z)
        X = X + np.where(groups[idx, None] == 2, meandiff(T), 0.0)
        Y = X + eps
        for row, i in enumerate(idx):
            values[i] = Y[row]
    subjects = [
        Subject(id=str(i + 1), group=int(groups[i]), times=times[i], values=values[i])
        for i in range(n)
    ]
    return SparseDataset(subjects, tau2=tau2)


def write_csv(dataset: SparseDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(CSV_HEADER)
        for s in dataset.subjects:
            for t, y in zip(s.times, s.values):
                writer.writerow([s.id, s.group, repr(float(t)), repr(float(y))])


def read_csv(path, rescale: bool = True) -> SparseDataset:
    """Read ``subject_id,group,time,value`` rows into a dataset.

    Rows with an empty ``value`` are treated as missing and skipped. Times are
    rescaled affinely onto [0, 1] when ``rescale`` is set.
    """
    records: dict[str, tuple[int, list[float], list[float]]] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataFormatError(f"line 1: header must be {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataFormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
            sid, grp, t, y = (c.strip() for c in row)
            try:
                grp = int(grp)
                t = float(t)
                y = float(y) if y not in ("", "NA", "nan", "NaN") else math.nan
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from None
            if grp not in (1, 2):
                raise DataFormatError(f"line {lineno}: group must be 1 or 2")
            if not math.isfinite(t):
                raise DataFormatError(f"line {lineno}: time must be finite")
            if sid not in records:
                records[sid] = (grp, [], [])
                order.append(sid)
            elif records[sid][0] != grp:
                raise DataFormatError(f"line {lineno}: subject {sid} changes group")
            if math.isfinite(y):
                records[sid][1].append(t)
                records[sid][2].append(y)
    subjects = []
    for sid in order:
        grp, ts, ys = records[sid]
        if not ts:
            raise DataFormatError(f"subject {sid} has no observed values")
        ts, ys = np.asarray(ts), np.asarray(ys)
        o = np.argsort(ts, kind="stable")
        subjects.append(Subject(sid, grp, ts[o], ys[o]))
    if not subjects:
        raise DataFormatError("no data rows")
    data = SparseDataset(subjects)
    if rescale:
        t_all = np.concatenate([s.times for s in subjects])
        lo, hi = t_all.min(), t_all.max()
        if hi <= lo:
            raise DataFormatError("all observation times are identical")
        for s in subjects:
            s.times = (s.times - lo) / (hi - lo)
        data.meta["time_range"] = (float(lo), float(hi))
    return data
