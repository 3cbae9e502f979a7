"""Command-line interface.

Subcommands::

    sparsepass power CONFIG        power at one or more sample sizes
    sparsepass samplesize CONFIG   minimum sample size for target power
    sparsepass validate CONFIG     theoretical vs empirical power tables
    sparsepass test DATA.csv       two-sample test on user data

CONFIG is a JSON file or the name of a bundled configuration (see
``sparsepass list``). Reports go to stdout (or ``--out``), diagnostics to
stderr. Exit status: 0 success, 2 configuration or input error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from sparsepass.fpca import fpca_fit
from sparsepass.harness import HARNESS_MODES, MODE_TAGS, ExperimentCell, ExperimentGrid, empirical_power, run_grid
from sparsepass.hotelling import hotelling_test
from sparsepass.linalg import NotSPDError
from sparsepass.power import (
    LAMBDA_SOURCES,
    MODES,
    PowerRequest,
    UnreachableTargetError,
    algorithm2_samplesize,
    prepare_power,
)
from sparsepass.process import DataFormatError, MeanDiff, SamplingDesign, kernel_from_config, read_csv
from sparsepass.shrinkage import G_SOURCES

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("sparsepass")


class ConfigError(ValueError):
    """Invalid configuration; reported with exit status 2."""


# keys accepted at the top level of a config file, with their expected types
_TOP_KEYS = {
    "description": str,
    "kernel": dict,
    "design": dict,
    "meandiff": dict,
    "eta": (int, float),
    "etas": list,
    "n": (int, list),
    "n1": int,
    "n2": int,
    "ns": list,
    "kappa": (int, float),
    "tau2": (int, float),
    "alpha": (int, float),
    "pve": (int, float),
    "target": (int, float),
    "targets": list,
    "n_max": int,
    "missing": list,
    "modes": list,
    "reps": int,
    "draws": int,
    "seed": int,
    "mode": str,
    "lambda_source": str,
    "g_source": str,
    "S": int,
    "R": int,
    "n_big": int,
    "h_mean": (int, float),
    "h_cov": (int, float),
    "rule": str,
}
_DESIGN_KEYS = {"counts", "schedule", "missing", "min_obs"}
_MEANDIFF_KEYS = {"kind", "coefficients", "knots", "values"}

DEFAULTS = {
    "tau2": 0.001,
    "alpha": 0.05,
    "pve": 0.95,
    "kappa": 1.0,
    "draws": 100_000,
    "reps": 1000,
    "seed": 0,
    "mode": "exact",
    "lambda_source": "mc",
    "g_source": "full",
    "S": 10_000,
    "R": 100,
    "n_big": 10_000,
    "n_max": 100_000,
    "rule": "f",
}


def bundled_configs() -> list[str]:
    root = resources.files("sparsepass") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(ref: str) -> dict:
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
    else:
        res = resources.files("sparsepass") / "configs" / f"{ref}.json"
        if not res.is_file():
            raise ConfigError(f"no config file or bundled config named {ref!r}")
        text = res.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return validate_config(cfg)


def validate_config(cfg) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(cfg) - set(_TOP_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for k, v in cfg.items():
        typ = _TOP_KEYS[k]
        if isinstance(v, bool) or not isinstance(v, typ):
            raise ConfigError(f"config key {k!r} has the wrong type")
    if "design" in cfg:
        extra = sorted(set(cfg["design"]) - _DESIGN_KEYS)
        if extra:
            raise ConfigError(f"unknown design keys: {', '.join(extra)}")
    if "meandiff" in cfg:
        extra = sorted(set(cfg["meandiff"]) - _MEANDIFF_KEYS)
        if extra:
            raise ConfigError(f"unknown meandiff keys: {', '.join(extra)}")
    out = dict(DEFAULTS)
    out.update(cfg)
    checks = [
        (0.0 < out["alpha"] < 1.0, "alpha must lie in (0, 1)"),
        (0.0 < out["pve"] <= 1.0, "pve must lie in (0, 1]"),
        (out["tau2"] >= 0, "tau2 must be non-negative"),
        (out["kappa"] > 0, "kappa must be positive"),
        (out["draws"] >= 1000, "draws must be at least 1000"),
        (out["reps"] >= 100, "reps must be at least 100"),
        (out["mode"] in MODES, f"mode must be one of {MODES}"),
        (out["lambda_source"] in LAMBDA_SOURCES, f"lambda_source must be one of {LAMBDA_SOURCES}"),
        (out["g_source"] in G_SOURCES, f"g_source must be one of {G_SOURCES}"),
        (out["rule"] in ("f", "chi2"), "rule must be 'f' or 'chi2'"),
        (0 <= out["seed"] < 2**64, "seed must be a 64-bit unsigned integer"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    for m in out.get("modes", []):
        if m not in HARNESS_MODES:
            raise ConfigError(f"unknown harness mode {m!r}")
    for t in _targets(out):
        if not out["alpha"] < t < 1.0:
            raise ConfigError("target power must lie in (alpha, 1)")
    return out


def _targets(cfg) -> list[float]:
    if "targets" in cfg:
        return [float(t) for t in cfg["targets"]]
    if "target" in cfg:
        return [float(cfg["target"])]
    return []


def _kernel(cfg):
    if "kernel" not in cfg:
        raise ConfigError("config needs a 'kernel'")
    try:
        return kernel_from_config(cfg["kernel"])
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"bad kernel: {exc}") from None


def _design(cfg) -> SamplingDesign:
    d = dict(cfg.get("design", {}))
    try:
        if "counts" in d and isinstance(d["counts"], list):
            d["counts"] = tuple(d["counts"])
        if d.get("schedule") is not None:
            d["schedule"] = tuple(d["schedule"])
        return SamplingDesign(**d)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad design: {exc}") from None


def _meandiffs(cfg) -> list[MeanDiff]:
    try:
        if "meandiff" in cfg:
            md = dict(cfg["meandiff"])
            for k in ("coefficients", "knots", "values"):
                if k in md:
                    md[k] = tuple(float(x) for x in md[k])
            return [MeanDiff(**md)]
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad meandiff: {exc}") from None
    if "etas" in cfg:
        return [MeanDiff.cubic(float(e)) for e in cfg["etas"]]
    if "eta" in cfg:
        return [MeanDiff.cubic(float(cfg["eta"]))]
    raise ConfigError("config needs 'meandiff', 'eta' or 'etas'")


def _request(cfg, meandiff: MeanDiff) -> PowerRequest:
    try:
        return PowerRequest(
            meandiff,
            _design(cfg),
            kernel=_kernel(cfg),
            tau2=float(cfg["tau2"]),
            alpha=float(cfg["alpha"]),
            pve=float(cfg["pve"]),
            kappa=float(cfg["kappa"]),
            M=int(cfg["draws"]),
            seed=int(cfg["seed"]),
            mode=cfg["mode"],
            lambda_source=cfg["lambda_source"],
            S=int(cfg["S"]),
            R=int(cfg["R"]),
            g_source=cfg["g_source"],
            n_big=int(cfg["n_big"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _sizes(cfg) -> list[tuple[int, int]]:
    kappa = float(cfg["kappa"])
    if "n1" in cfg or "n2" in cfg:
        if "n1" not in cfg or "n2" not in cfg:
            raise ConfigError("give both n1 and n2")
        sizes = [(int(cfg["n1"]), int(cfg["n2"]))]
    elif "n" in cfg or "ns" in cfg:
        ns = cfg["n"] if "n" in cfg else cfg["ns"]
        ns = ns if isinstance(ns, list) else [ns]
        sizes = []
        for n in ns:
            n2 = int(round(int(n) / (1.0 + kappa)))
            sizes.append((int(n) - n2, n2))
    else:
        raise ConfigError("config needs 'n', 'ns' or 'n1'/'n2'")
    for n1, n2 in sizes:
        if n1 < 2 or n2 < 2:
            raise ConfigError("each group needs at least two subjects")
    return sizes


# ---------------------------------------------------------------------------
# subcommands


def cmd_power(cfg) -> dict:
    rows = []
    meta = {}
    for md in _meandiffs(cfg):
        req = _request(cfg, md)
        prep = prepare_power(req)
        meta = {"K": prep.K, "lambdas": [float(x) for x in prep.eigsys.values], "tau2_used": prep.tau2_used}
        for n1, n2 in _sizes(cfg):
            if n1 + n2 - prep.K - 1 < 1:
                raise ConfigError(f"n = {n1 + n2} too small for K = {prep.K}")
            r = prep.power(n1, n2)
            rows.append({
                "meandiff": _md_label(md), "n": n1 + n2, "n1": n1, "n2": n2, "power": r.power, "se": r.se,
                "K": r.K, "threshold": r.threshold, "nu": r.nu, "delta": r.delta,
            })
    return {"command": "power", "results": rows, **meta}


def cmd_samplesize(cfg) -> dict:
    targets = _targets(cfg)
    if not targets:
        raise ConfigError("config needs 'target' or 'targets'")
    rows = []
    for md in _meandiffs(cfg):
        req = _request(cfg, md)
        prep = prepare_power(req)
        for g in targets:
            r = algorithm2_samplesize(req, g, n_max=int(cfg["n_max"]), prepared=prep)
            rows.append({
                "meandiff": _md_label(md), "target": g, "n": r.n, "n1": r.n1, "n2": r.n2, "power": r.power,
                "power_below": r.power_below, "K": r.K,
                "brackets": bool(r.power > g and (r.power_below is None or r.power_below <= g)),
            })
    return {"command": "samplesize", "results": rows}


def cmd_validate(cfg, workers: int = 1) -> dict:
    kernel, design = _kernel(cfg), _design(cfg)
    etas = [float(e) for e in cfg.get("etas", [cfg["eta"]] if "eta" in cfg else [])]
    if not etas:
        raise ConfigError("validate needs 'etas'")
    targets = _targets(cfg)
    modes = list(cfg.get("modes", []))
    if targets:
        return _validate_samplesize(cfg, kernel, design, etas, targets, modes, workers)
    ns = [int(n) for n in cfg.get("ns", [])]
    if not ns:
        raise ConfigError("experiment grid is empty: give 'ns' or 'targets'")
    grid = ExperimentGrid(
        kernel, design, etas, ns, [float(p) for p in cfg.get("missing", [0.0])], int(cfg["reps"]),
        float(cfg["alpha"]), float(cfg["tau2"]), float(cfg["pve"]), modes, int(cfg["seed"]),
        float(cfg["kappa"]), int(cfg["draws"]), int(cfg["S"]), cfg["lambda_source"], int(cfg["R"]),
    )
    return {"command": "validate", "results": run_grid(grid, workers)}


def _validate_samplesize(cfg, kernel, design, etas, targets, modes, workers):
    rows = []
    for ie, eta in enumerate(etas):
        md = MeanDiff.cubic(eta)
        req = _request(cfg, md)
        prep = prepare_power(req)
        for it, g in enumerate(targets):
            r = algorithm2_samplesize(req, g, n_max=int(cfg["n_max"]), prepared=prep)
            row = {"eta": eta, "target": g, "n_min": r.n, "n1": r.n1, "n2": r.n2, "power": r.power,
                   "power_below": r.power_below, "K": r.K}
            for im, mode in enumerate(modes):
                cell = ExperimentCell(kernel, design, md, r.n1, r.n2, float(cfg["tau2"]), float(cfg["alpha"]),
                                      int(cfg["reps"]), mode, float(cfg["pve"]), int(cfg["seed"]), (4, ie, it, im),
                                      int(cfg["R"]))
                emp = empirical_power(cell, workers)
                tag = MODE_TAGS[mode]
                row.update({f"{tag}_empirical": emp.rate, f"{tag}_ci_low": emp.ci_low,
                            f"{tag}_ci_high": emp.ci_high, f"{tag}_failures": emp.failures})
            rows.append(row)
    return {"command": "validate", "results": rows}


def cmd_test(path: str, cfg) -> dict:
    data = read_csv(path)
    n1, n2 = data.group_sizes()
    if n1 == 0 or n2 == 0:
        raise DataFormatError("data contain a single group; the test needs groups 1 and 2")
    if n1 < 2 or n2 < 2:
        raise DataFormatError("each group needs at least two subjects")
    fit = fpca_fit(data, R=int(cfg["R"]), pve=float(cfg["pve"]), h_mean=float(cfg.get("h_mean", 0.1)),
                   h_cov=float(cfg.get("h_cov", 0.15)))
    s = fit.scores
    res = hotelling_test(s[fit.groups == 1], s[fit.groups == 2], float(cfg["alpha"]), cfg["rule"])
    lo, hi = data.meta.get("time_range", (0.0, 1.0))
    times = lo + fit.grid * (hi - lo)
    return {
        "command": "test",
        "result": res.to_dict(),
        "tau2_hat": fit.tau2,
        "lambdas": [float(x) for x in fit.eigsys.values],
        "pve_achieved": fit.eigsys.pve_achieved,
        "effect_curve": {"time": [float(t) for t in times], "group1_minus_group2": [float(v) for v in fit.effect_curve()]},
    }


def _md_label(md: MeanDiff) -> str:
    if md.kind == "polynomial":
        return "poly(" + ",".join(repr(float(c)) for c in md.coefficients) + ")"
    if md.kind == "piecewise":
        return "piecewise"
    return "zero"


# ---------------------------------------------------------------------------
# output


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return None if not math.isfinite(x) else x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def render(report: dict, fmt: str) -> str:
    report = _clean(report)
    if fmt == "json":
        return json.dumps(report, indent=2, sort_keys=True) + "\n"
    rows = report.get("results")
    if rows is None:
        rows = [dict(report["result"], tau2_hat=report["tau2_hat"])]
    buf = io.StringIO()
    if rows:
        cols = []
        for r in rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ";".join(_cell(x) for x in v)
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsepass", description="Power and sample size for sparse functional two-sample tests.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("power", "samplesize", "validate"):
        sp = sub.add_parser(name)
        sp.add_argument("config", help="JSON config file or bundled config name")
    st = sub.add_parser("test", help="run the test on a CSV file")
    st.add_argument("data", help="CSV with header subject_id,group,time,value")
    st.add_argument("--config", help="optional JSON config with alpha, pve, R, h_mean, h_cov, rule")
    st.add_argument("--pve", type=float)
    st.add_argument("--alpha", type=float)
    sub.add_parser("list", help="list bundled configs")
    for sp in sub.choices.values():
        sp.add_argument("--seed", type=int)
        sp.add_argument("--draws", type=int, help="Monte Carlo draws for the power distribution")
        sp.add_argument("--reps", type=int, help="replicated datasets per empirical cell")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", help="write the report here instead of stdout")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    for key in ("seed", "draws", "reps"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    for key in ("pve", "alpha"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    return validate_config(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list":
            report = {"command": "list", "results": [{"name": n} for n in bundled_configs()]}
        elif args.command == "test":
            cfg = _overrides(load_config(args.config) if args.config else validate_config({}), args)
            report = cmd_test(args.data, cfg)
        else:
            cfg = _overrides(load_config(args.config), args)
            if args.command == "power":
                report = cmd_power(cfg)
            elif args.command == "samplesize":
                report = cmd_samplesize(cfg)
            else:
                if args.workers < 1:
                    raise ConfigError("workers must be at least 1")
                report = cmd_validate(cfg, args.workers)
            report["inputs"] = cfg
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotSPDError, np.linalg.LinAlgError, UnreachableTargetError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report["schema_version"] = SCHEMA_VERSION
    text = render(report, args.format)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
