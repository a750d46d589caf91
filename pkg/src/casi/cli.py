"""Command-line front-end: ``casi {estimate-k,compare,bench,gen}``.

Exit codes: 0 success, 1 data or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bench import (
    METHOD_NAMES,
    BenchConfig,
    BlobSpec,
    canonical_method,
    emit_plot_data,
    emit_report,
    format_table,
    generate_blobs,
    run_comparison,
    run_scaling,
    scaling_to_dict,
)
from .dataset import DataError, load_csv, save_csv, standardize
from .estimators import FusionConfig, estimate_k
from .kmeans import KMeansConfig

OUTPUT_DIR_ENV = "CASI_OUTPUT_DIR"

# Shared option defaults; every command reads the same table.
DEFAULTS = {
    "seed": 0,
    "weights": "0.25,0.25,0.25,0.25",
    "k_max": 20,
    "sample_size": 1000,
    "n_refs": 10,
    "batch_size": None,
    "n_init": 5,
    "max_iter": 300,
    "tol": 1e-6,
    "sigma": "multiscale",
    "standardize": False,
    "delimiter": ",",
    "header": False,
    "cluster": False,
    "diagnostics": False,
    "methods": ",".join(METHOD_NAMES),
    "format": "json",
    "plot_data": None,
    "trials": 3,
    "no_warmup": False,
    "parallel": False,
    "k": 3,
    "n_per": 100,
    "n_per_list": "100,200,400",
    "d": 2,
    "spread": 30.0,
    "sd": 1.0,
    "with_labels": False,
}


class UsageError(Exception):
    pass


def _d(key: str) -> str:
    return f"(default: {DEFAULTS[key]})"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="JSON file with option values; flags override it")
    p.add_argument("--seed", type=int, help=f"master seed {_d('seed')}")


def _add_estimation(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("estimation")
    g.add_argument("--weights", help=f"four weights: density,local,ccr_coi,gap {_d('weights')}")
    g.add_argument("--k-max", type=int, help=f"largest k considered {_d('k_max')}")
    g.add_argument("--sample-size", type=int, help=f"rows sampled per estimator {_d('sample_size')}")
    g.add_argument("--n-refs", type=int, help=f"gap reference sets B {_d('n_refs')}")
    g.add_argument("--batch-size", type=int, help=f"run estimators on row batches of this size {_d('batch_size')}")
    g.add_argument("--sigma", help=f"kernel width: multiscale, median-heuristic or a number {_d('sigma')}")
    g.add_argument("--n-init", type=int, help=f"K-Means restarts {_d('n_init')}")
    g.add_argument("--max-iter", type=int, help=f"K-Means iteration cap {_d('max_iter')}")
    g.add_argument("--tol", type=float, help=f"K-Means centroid-shift tolerance {_d('tol')}")


def _add_input(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("input")
    g.add_argument("--input", "-i", required=True, help="CSV file, one row per sample")
    g.add_argument("--delimiter", help=f"CSV field separator {_d('delimiter')}")
    g.add_argument("--header", action="store_true", default=None, help=f"skip the first line {_d('header')}")
    g.add_argument("--standardize", action="store_true", default=None,
                   help=f"z-score columns before estimation {_d('standardize')}")


def _add_blobs(p: argparse.ArgumentParser, sizes: bool = False) -> None:
    g = p.add_argument_group("synthetic data")
    g.add_argument("--k", type=int, help=f"number of clusters {_d('k')}")
    if sizes:
        g.add_argument("--n-per-list", help=f"comma-separated points per cluster {_d('n_per_list')}")
    else:
        g.add_argument("--n-per", type=int, help=f"points per cluster {_d('n_per')}")
    g.add_argument("--d", type=int, help=f"dimensions {_d('d')}")
    g.add_argument("--spread", type=float, help=f"side of the box holding the centers {_d('spread')}")
    g.add_argument("--sd", type=float, help=f"cluster standard deviation {_d('sd')}")


def _add_compare_opts(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("comparison")
    g.add_argument("--methods", help=f"comma-separated methods {_d('methods')}")
    g.add_argument("--trials", type=int, help=f"timed runs per method {_d('trials')}")
    g.add_argument("--no-warmup", action="store_true", default=None,
                   help=f"time the first (counted) run too {_d('no_warmup')}")
    g.add_argument("--parallel", action="store_true", default=None,
                   help=f"run methods concurrently; timings become indicative {_d('parallel')}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="casi",
        description="Estimate the K-Means cluster count by fusing four estimators.",
        epilog=f"Default output files go to ${OUTPUT_DIR_ENV} when set, else the current directory.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("estimate-k", help="print the four estimates and the fused k as JSON")
    _add_common(p)
    _add_input(p)
    _add_estimation(p)
    p.add_argument("--cluster", action="store_true", default=None,
                   help=f"also fit K-Means at the fused k and summarize it {_d('cluster')}")
    p.add_argument("--diagnostics", action="store_true", default=None,
                   help=f"include per-estimator diagnostics {_d('diagnostics')}")
    p.add_argument("--output", "-o", help="also write the JSON here (default: standard output only)")

    p = sub.add_parser("compare", help="compare the fused estimate against baseline selectors")
    _add_common(p)
    _add_input(p)
    _add_estimation(p)
    _add_compare_opts(p)
    p.add_argument("--format", choices=("json", "csv"), help=f"report format {_d('format')}")
    p.add_argument("--output", "-o", help="report path (default: report.<format> in the output directory)")
    p.add_argument("--plot-data", help=f"write method,k,score CSV here {_d('plot_data')}")

    p = sub.add_parser("bench", help="scaling run on synthetic blobs of growing size")
    _add_common(p)
    _add_blobs(p, sizes=True)
    _add_estimation(p)
    _add_compare_opts(p)
    p.add_argument("--output", "-o", help="JSON path (default: bench.json in the output directory)")

    p = sub.add_parser("gen", help="write a synthetic blob dataset as CSV")
    _add_common(p)
    _add_blobs(p)
    p.add_argument("--with-labels", action="store_true", default=None,
                   help=f"append the true cluster index as a last column {_d('with_labels')}")
    p.add_argument("--output", "-o", help="CSV path (default: blobs.csv in the output directory)")
    return parser


def _resolve(args: argparse.Namespace) -> dict:
    """Merge flags over the config file over the defaults."""
    config = {}
    if getattr(args, "config", None):
        try:
            config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(config, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
        known = set(vars(args)) - {"command", "config"}
        unknown = sorted(set(k.replace("-", "_") for k in config) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        config = {k.replace("-", "_"): v for k, v in config.items()}
    out = {}
    for key, value in vars(args).items():
        if key in ("command", "config"):
            continue
        if value is None:
            value = config.get(key, DEFAULTS.get(key))
        out[key] = value
    return out


def _parse_weights(text) -> FusionConfig:
    if isinstance(text, (list, tuple)):
        parts = list(text)
    else:
        parts = [p for p in str(text).split(",") if p.strip()]
    try:
        return FusionConfig(tuple(float(p) for p in parts))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"--weights: {exc}") from exc


def _parse_sigma(value):
    if value in ("multiscale", "median-heuristic"):
        return value
    try:
        sigma = float(value)
    except (TypeError, ValueError):
        raise UsageError(f"--sigma must be multiscale, median-heuristic or a positive number, got {value!r}") from None
    if not sigma > 0:
        raise UsageError("--sigma must be positive")
    return sigma


def _positive(opts: dict, *keys) -> None:
    for key in keys:
        v = opts.get(key)
        if v is not None and v < 1:
            raise UsageError(f"--{key.replace('_', '-')} must be >= 1, got {v}")


def _kmeans_cfg(opts) -> KMeansConfig:
    try:
        return KMeansConfig(n_init=opts["n_init"], max_iter=opts["max_iter"], tol=opts["tol"], seed=opts["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV) or ".")


def _load(opts) -> np.ndarray:
    X = load_csv(opts["input"], delimiter=opts["delimiter"], has_header=bool(opts["header"]))
    if opts.get("standardize"):
        X, _ = standardize(X)
    return X


def _bench_cfg(opts, weights) -> BenchConfig:
    try:
        return BenchConfig(
            seed=opts["seed"], k_max=opts["k_max"], trials=opts["trials"], warmup=not opts["no_warmup"],
            weights=weights.weights, sample_size=opts["sample_size"], n_refs=opts["n_refs"],
            n_init=opts["n_init"], max_iter=opts["max_iter"], tol=opts["tol"],
            batch_size=opts["batch_size"], parallel=bool(opts["parallel"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _methods(text) -> list:
    names = text if isinstance(text, list) else [m for m in str(text).split(",") if m.strip()]
    if not names:
        raise UsageError("--methods needs at least one method")
    try:
        return [canonical_method(m) for m in names]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _check_estimation(opts) -> None:
    _positive(opts, "k_max", "sample_size", "n_refs", "batch_size", "n_init", "max_iter")
    if opts["k_max"] < 2:
        raise UsageError("--k-max must be >= 2")


def cmd_estimate_k(opts) -> int:
    weights = _parse_weights(opts["weights"])
    sigma = _parse_sigma(opts["sigma"])
    _check_estimation(opts)
    cfg = _kmeans_cfg(opts)
    X = _load(opts)
    res = estimate_k(X, weights, opts["seed"], opts["k_max"], opts["sample_size"], opts["n_refs"], cfg,
                     sigma=sigma, batch_size=opts["batch_size"], cluster=bool(opts["cluster"]))
    text = json.dumps(res.to_dict(diagnostics=bool(opts["diagnostics"])), indent=2)
    print(text)
    if opts.get("output"):
        Path(opts["output"]).write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_compare(opts) -> int:
    weights = _parse_weights(opts["weights"])
    _check_estimation(opts)
    _positive(opts, "trials")
    methods = _methods(opts["methods"])
    cfg = _bench_cfg(opts, weights)
    X = _load(opts)
    report = run_comparison(X, methods, cfg, dataset_id=Path(opts["input"]).name)
    fmt = opts["format"]
    path = Path(opts["output"]) if opts.get("output") else _output_dir() / f"report.{fmt}"
    emit_report(report, fmt, path)
    if opts.get("plot_data"):
        emit_plot_data(report, opts["plot_data"])
    print(format_table(report))
    print(f"report written to {path}")
    return 0


def _blob_spec(opts, n_per) -> BlobSpec:
    try:
        return BlobSpec(n_per, opts["d"], opts["k"], opts["spread"], opts["sd"], opts["seed"])
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_bench(opts) -> int:
    weights = _parse_weights(opts["weights"])
    _check_estimation(opts)
    _positive(opts, "trials")
    methods = _methods(opts["methods"])
    try:
        sizes = [int(s) for s in str(opts["n_per_list"]).split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--n-per-list must be comma-separated integers, got {opts['n_per_list']!r}") from None
    if not sizes or min(sizes) < 1:
        raise UsageError("--n-per-list needs positive sizes")
    spec = _blob_spec(opts, sizes[0])
    cfg = _bench_cfg(opts, weights)
    points = run_scaling(spec, sizes, methods, cfg)
    path = Path(opts["output"]) if opts.get("output") else _output_dir() / "bench.json"
    path.write_text(json.dumps(scaling_to_dict(points, spec), indent=2) + "\n", encoding="utf-8")
    for p in points:
        print(f"n = {p.n}")
        print(format_table(p.report))
    print(f"report written to {path}")
    return 0


def cmd_gen(opts) -> int:
    spec = _blob_spec(opts, opts["n_per"])
    X, labels = generate_blobs(spec)
    path = Path(opts["output"]) if opts.get("output") else _output_dir() / "blobs.csv"
    save_csv(path, X, labels if opts["with_labels"] else None)
    print(f"wrote {X.shape[0]} rows to {path}")
    return 0


COMMANDS = {"estimate-k": cmd_estimate_k, "compare": cmd_compare, "bench": cmd_bench, "gen": cmd_gen}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = _resolve(args)
        return COMMANDS[args.command](opts)
    except UsageError as exc:
        parser.exit(2, f"casi {args.command}: error: {exc}\n")
    except (DataError, ValueError, ArithmeticError, OSError, RuntimeError) as exc:
        print(f"casi {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
