"""Synthetic blob data, method comparison runs and report files."""

from __future__ import annotations

import csv
import json
import math
import platform
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .baselines import SELECTORS, silhouette_condensed, silhouette_full
from .dataset import check_data
from .estimators import DEFAULT_K_MAX, DEFAULT_REFERENCES, DEFAULT_SAMPLE_SIZE, DEFAULT_WEIGHTS, estimate_k
from .kmeans import KMeansConfig, fit_kmeans
from .numerics import count_distances

SCHEMA_VERSION = 1
METHOD_NAMES = ("proposed", "wcss", "dbi", "silhouette_full", "silhouette_condensed")
ALIASES = {"silhouette": "silhouette_full", "casi": "proposed"}
REPORT_FIELDS = (
    "method",
    "selected_k",
    "silhouette_full_quality",
    "silhouette_condensed_quality",
    "elapsed_seconds",
    "elapsed_mean_seconds",
    "distance_eval_count",
    "error",
)
# Minimum center separation, in cluster standard deviations.
MIN_SEPARATION = 10.0
MAX_CENTER_DRAWS = 100


def canonical_method(name: str) -> str:
    name = name.strip().lower()
    name = ALIASES.get(name, name)
    if name not in METHOD_NAMES:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHOD_NAMES)}")
    return name


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlobSpec:
    n_per_cluster: int = 100
    d: int = 2
    k_true: int = 3
    center_spread: float = 30.0
    cluster_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k_true < 1:
            raise ValueError(f"k_true must be >= 1, got {self.k_true}")
        if self.n_per_cluster < 1:
            raise ValueError(f"n_per_cluster must be >= 1, got {self.n_per_cluster}")
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if not self.center_spread > 0 or not math.isfinite(self.center_spread):
            raise ValueError(f"center_spread must be positive, got {self.center_spread}")
        if not self.cluster_sd >= 0 or not math.isfinite(self.cluster_sd):
            raise ValueError(f"cluster_sd must be non-negative, got {self.cluster_sd}")

    @property
    def separation_factor(self) -> float:
        return math.inf if self.cluster_sd == 0 else self.center_spread / self.cluster_sd

    def to_dict(self) -> dict:
        out = asdict(self)
        out["separation_factor"] = self.separation_factor
        return out


def _min_center_distance(C: np.ndarray) -> float:
    if C.shape[0] < 2:
        return math.inf
    diff = C[:, None, :] - C[None, :, :]
    D = np.sqrt((diff**2).sum(axis=2))
    return float(D[np.triu_indices(C.shape[0], 1)].min())


def draw_centers(spec: BlobSpec, rng: np.random.Generator) -> np.ndarray:
    """Centers uniform in ``[0, spread]^d``, redrawn while two lie closer than
    ``MIN_SEPARATION * sd``. After ``MAX_CENTER_DRAWS`` the best draw is kept."""
    need = MIN_SEPARATION * spec.cluster_sd
    best, best_gap = None, -1.0
    for _ in range(MAX_CENTER_DRAWS):
        C = rng.uniform(0.0, spec.center_spread, size=(spec.k_true, spec.d))
        gap = _min_center_distance(C)
        if gap > best_gap:
            best, best_gap = C, gap
        if gap >= need:
            break
    return best


def generate_blobs(spec: BlobSpec) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian clusters in shuffled row order, with true labels."""
    rng = np.random.default_rng(spec.seed)
    C = draw_centers(spec, rng)
    labels = np.repeat(np.arange(spec.k_true), spec.n_per_cluster)
    X = C[labels] + spec.cluster_sd * rng.standard_normal((labels.size, spec.d))
    order = rng.permutation(labels.size)
    return X[order], labels[order]


# ---------------------------------------------------------------------------
# Comparison runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchConfig:
    seed: int = 0
    k_max: int = DEFAULT_K_MAX
    trials: int = 3
    warmup: bool = True
    weights: tuple = DEFAULT_WEIGHTS
    sample_size: Optional[int] = DEFAULT_SAMPLE_SIZE
    n_refs: int = DEFAULT_REFERENCES
    n_init: int = 5
    max_iter: int = 300
    tol: float = 1e-6
    batch_size: Optional[int] = None
    parallel: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.k_max < 3:
            raise ValueError(f"k_max must be >= 3, got {self.k_max}")

    def kmeans(self) -> KMeansConfig:
        return KMeansConfig(n_init=self.n_init, max_iter=self.max_iter, tol=self.tol, seed=self.seed)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["weights"] = list(self.weights)
        return out


@dataclass
class MethodRow:
    method: str
    selected_k: Optional[int] = None
    silhouette_full_quality: Optional[float] = None
    silhouette_condensed_quality: Optional[float] = None
    elapsed_seconds: Optional[float] = None
    elapsed_mean_seconds: Optional[float] = None
    distance_eval_count: Optional[int] = None
    error: Optional[str] = None
    curves: dict = field(default_factory=dict)
    distances_by_source: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {name: getattr(self, name) for name in REPORT_FIELDS}
        out["distances_by_source"] = self.distances_by_source
        out["curves"] = self.curves
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "MethodRow":
        return cls(**{name: obj.get(name) for name in REPORT_FIELDS}, curves=obj.get("curves", {}),
                   distances_by_source=obj.get("distances_by_source", {}))


@dataclass
class BenchReport:
    dataset_id: str
    rows: list
    environment: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "dataset_id": self.dataset_id,
            "environment": self.environment,
            "rows": [r.to_dict() for r in self.rows],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "BenchReport":
        version = obj.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema_version {version!r}")
        return cls(obj["dataset_id"], [MethodRow.from_dict(r) for r in obj["rows"]], obj["environment"])

    def row(self, method: str) -> MethodRow:
        method = canonical_method(method)
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)


def _selector(method: str, X: np.ndarray, cfg: BenchConfig):
    """Return a zero-argument callable that selects k and its curves."""
    top = max(3, min(cfg.k_max, X.shape[0] - 1))
    kcfg = cfg.kmeans()
    if method == "proposed":
        def run():
            res = estimate_k(X, cfg.weights, cfg.seed, cfg.k_max, cfg.sample_size, cfg.n_refs,
                             kcfg, batch_size=cfg.batch_size)
            curves = {"estimates": {m: e.k for m, e in res.estimates.items()}}
            ccr = res.estimates["ccr_coi"].diagnostics.get("scores")
            if ccr:
                curves["ccr_coi"] = {"k_values": [r.k for r in ccr], "scores": [r.combined for r in ccr]}
            gap = res.estimates["gap"].diagnostics.get("report")
            if gap is not None:
                curves["gap"] = {"k_values": list(gap.k_values), "scores": gap.gap.tolist()}
            return res.k_final, curves
        return run
    k_range = range(1, top + 1) if method == "wcss" else range(2, top + 1)

    def run():
        curve = SELECTORS[method](X, k_range, kcfg)
        return curve.selected_k, {method: {"k_values": curve.k_values, "scores": curve.scores}}
    return run


def _quality(X, k, cfg: BenchConfig):
    if k < 2 or k > X.shape[0]:
        return None, None
    fit = fit_kmeans(X, k, cfg.kmeans())
    return silhouette_full(X, fit), silhouette_condensed(X, fit)


def _run_method(method: str, X: np.ndarray, cfg: BenchConfig) -> MethodRow:
    row = MethodRow(method)
    try:
        run = _selector(method, X, cfg)
        t0 = time.perf_counter()
        with count_distances() as counter:
            k, curves = run()
        first = time.perf_counter() - t0
        row.distance_eval_count = int(counter.total)
        row.distances_by_source = dict(sorted(counter.by_source.items()))
        row.selected_k = int(k)
        row.curves = curves
        # Without warmup the counted run is the first timed trial.
        times = [] if cfg.warmup else [first]
        while len(times) < cfg.trials:
            t0 = time.perf_counter()
            k_again, _ = run()
            times.append(time.perf_counter() - t0)
            if k_again != k:
                raise RuntimeError(f"non-deterministic selection: {k} then {k_again}")
        row.elapsed_seconds = statistics.median(times)
        row.elapsed_mean_seconds = statistics.fmean(times)
        row.silhouette_full_quality, row.silhouette_condensed_quality = _quality(X, row.selected_k, cfg)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a report row
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def run_comparison(
    X,
    methods: Sequence[str] = METHOD_NAMES,
    cfg: Optional[BenchConfig] = None,
    dataset_id: str = "data",
) -> BenchReport:
    """Select k with each method and record quality, time and distance counts.

    Each method first runs once with distance counting on; that run is the
    warmup and is not timed. Then ``cfg.trials`` timed runs follow and the
    median and mean wall-clock times are reported. Only the selection is
    timed: the final K-Means fit and both silhouette scores at the selected k
    are computed afterwards. A failing method yields a row with ``error`` set
    and does not stop the others.
    """
    cfg = cfg or BenchConfig()
    X = check_data(X)
    names = [canonical_method(m) for m in methods]
    if cfg.parallel:
        # Threads share the machine, so parallel timings are indicative only.
        with ThreadPoolExecutor() as pool:
            rows = list(pool.map(lambda m: _run_method(m, X, cfg), names))
    else:
        rows = [_run_method(m, X, cfg) for m in names]
    env = {
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "n_rows": int(X.shape[0]),
        "n_cols": int(X.shape[1]),
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
    }
    return BenchReport(dataset_id, rows, env)


@dataclass
class ScalingPoint:
    n: int
    report: BenchReport


def run_scaling(spec: BlobSpec, sizes: Sequence[int], methods=METHOD_NAMES,
                cfg: Optional[BenchConfig] = None) -> list:
    """Repeat :func:`run_comparison` on blob data of growing per-cluster size."""
    points = []
    for n_per in sizes:
        s = replace(spec, n_per_cluster=int(n_per))
        X, _ = generate_blobs(s)
        points.append(ScalingPoint(X.shape[0], run_comparison(X, methods, cfg, f"blobs-n{X.shape[0]}")))
    return points


def scaling_to_dict(points: Sequence[ScalingPoint], spec: BlobSpec) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "blob_spec": spec.to_dict(),
        "runs": [{"n": p.n, "report": p.report.to_dict()} for p in points],
    }


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(report: BenchReport, fmt: str, path) -> Path:
    """Write ``report`` as JSON or CSV (one row per method, fixed columns)."""
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    elif fmt == "csv":
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_FIELDS)
            for r in report.rows:
                d = r.to_dict()
                w.writerow([_csv_value(d[name]) for name in REPORT_FIELDS])
    else:
        raise ValueError(f"format must be 'json' or 'csv', got {fmt!r}")
    return path


def read_report_csv(path) -> list:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def plot_rows(report: BenchReport) -> list:
    """``(method, k, score)`` triples from every curve in the report."""
    out = []
    for r in report.rows:
        for name, curve in r.curves.items():
            if not isinstance(curve, dict) or "k_values" not in curve:
                continue
            label = r.method if name == r.method else f"{r.method}:{name}"
            out.extend((label, int(k), float(s)) for k, s in zip(curve["k_values"], curve["scores"]))
    return out


def emit_plot_data(report: BenchReport, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "k", "score"))
        for method, k, score in plot_rows(report):
            w.writerow((method, k, repr(score)))
    return path


def format_table(report: BenchReport) -> str:
    """Fixed-width summary for terminals."""
    head = f"{'method':<22}{'k':>4}{'sil_full':>10}{'sil_cond':>10}{'median_s':>11}{'distances':>14}"
    lines = [head]
    for r in report.rows:
        if r.error:
            lines.append(f"{r.method:<22}  error: {r.error}")
            continue
        sf = "-" if r.silhouette_full_quality is None else f"{r.silhouette_full_quality:.4f}"
        sc = "-" if r.silhouette_condensed_quality is None else f"{r.silhouette_condensed_quality:.4f}"
        lines.append(f"{r.method:<22}{r.selected_k:>4}{sf:>10}{sc:>10}"
                     f"{r.elapsed_seconds:>11.4f}{r.distance_eval_count:>14}")
    return "\n".join(lines)
