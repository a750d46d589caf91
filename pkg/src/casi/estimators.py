"""Four independent cluster-count estimators and their weighted fusion."""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import BatchPlan, check_data, process_in_batches, sample_rows
from .kmeans import ClusteringResult, KMeansConfig, center_sq_distances, fit_kmeans
from .numerics import (
    DEFAULT_GRID_SIZE,
    DEFAULT_PROMINENCE,
    DEFAULT_SMOOTHING_WINDOW,
    SimilarityMatrix,
    kde_profile,
    laplacian,
    median_heuristic,
    pairwise_sq_distances,
    pca_project_1d,
    similarity_from_distances,
    symmetric_eigenvalues,
)

METHODS = ("density", "local_structure", "ccr_coi", "gap")
DEFAULT_WEIGHTS = (0.25, 0.25, 0.25, 0.25)
DEFAULT_SAMPLE_SIZE = 1000
DEFAULT_K_MAX = 20
DEFAULT_EPSILON = 1e-6
DEFAULT_REFERENCES = 10
# Multipliers on the median pairwise distance tried by the multiscale sigma rule.
DEFAULT_SIGMA_SCALES = (1.0, 0.5, 0.25, 0.125, 0.0625)
# Floor applied before taking log of a dispersion.
_LOG_FLOOR = 1e-300


@dataclass
class KEstimate:
    method: str
    k: int
    diagnostics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"estimated k must be >= 1, got {self.k}")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "k": int(self.k),
            "diagnostics": _jsonable(self.diagnostics),
            "warnings": list(self.warnings),
        }


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return obj


def default_k_range(n: int, k_min: int, k_max: int = DEFAULT_K_MAX) -> list:
    return list(range(k_min, max(k_min, min(k_max, n - 1)) + 1))


def _subsample(X: np.ndarray, sample_size: Optional[int], seed: int) -> np.ndarray:
    if sample_size is None or X.shape[0] <= sample_size:
        return X
    return sample_rows(X, sample_size, seed)


# ---------------------------------------------------------------------------
# Density valleys
# ---------------------------------------------------------------------------


def estimate_density_based(
    X,
    sample_size: Optional[int] = DEFAULT_SAMPLE_SIZE,
    seed: int = 0,
    bandwidth="silverman",
    grid_size: int = DEFAULT_GRID_SIZE,
    smoothing_window: int = DEFAULT_SMOOTHING_WINDOW,
    prominence: float = DEFAULT_PROMINENCE,
) -> KEstimate:
    """Count density peaks along the leading principal axis.

    The sample is projected to 1-D with PCA, a Gaussian KDE is evaluated on a
    grid and smoothed, and ``k`` is one more than the number of prominent
    valleys. Data with no spread yields ``k = 1`` and a warning instead of an
    error.
    """
    X = check_data(X, min_rows=2)
    Xs = _subsample(X, sample_size, seed)
    try:
        proj = pca_project_1d(Xs)
    except ValueError as exc:
        return KEstimate("density", 1, {"sample_size": Xs.shape[0]}, [f"degenerate data: {exc}"])
    profile = kde_profile(proj, bandwidth, grid_size, smoothing_window, prominence)
    return KEstimate(
        "density",
        profile.peak_count,
        {"sample_size": Xs.shape[0], "profile": profile},
        list(profile.notes),
    )


# ---------------------------------------------------------------------------
# Spectral eigengap
# ---------------------------------------------------------------------------


def _eigengap_k(sim: SimilarityMatrix, k_max: int, eigen_method: str):
    spectrum = symmetric_eigenvalues(laplacian(sim), eigen_method)
    limit = max(1, min(k_max, sim.n - 1))
    return int(np.argmax(spectrum.gaps[:limit])) + 1, spectrum, limit


def estimate_local_structure(
    X,
    sample_size: Optional[int] = DEFAULT_SAMPLE_SIZE,
    seed: int = 0,
    sigma="multiscale",
    kernel: str = "rbf",
    k_max: int = DEFAULT_K_MAX,
    affinity: str = "rbf",
    eigen_method: str = "auto",
    sigma_scales: Sequence[float] = DEFAULT_SIGMA_SCALES,
) -> KEstimate:
    """Largest eigengap of the unnormalized graph Laplacian.

    ``k`` is the index ``i`` (1-based, from the smallest eigenvalue) that
    maximizes ``lambda[i+1] - lambda[i]`` over ``i <= min(k_max, n - 1)``.

    ``sigma`` is a positive float, ``"median-heuristic"``, or
    ``"multiscale"``. The multiscale rule repeats the eigengap search with
    ``sigma = median * s`` for each ``s`` in ``sigma_scales`` and returns the
    most frequent k; ties go to the k reached at the largest sigma. With
    ``affinity="precomputed"`` ``X`` is taken as the similarity matrix itself
    and no sampling is done.
    """
    if affinity == "precomputed":
        S = np.asarray(X, dtype=np.float64)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("precomputed affinity must be a square matrix")
        if S.shape[0] < 3:
            raise ValueError("local structure estimation needs at least 3 points")
        k, spectrum, limit = _eigengap_k(SimilarityMatrix(S, float("nan"), "precomputed"),
                                         k_max, eigen_method)
        return KEstimate("local_structure", k,
                         {"sample_size": S.shape[0], "kernel": "precomputed",
                          "spectrum": spectrum, "k_max": limit})
    if affinity != "rbf":
        raise ValueError(f"unknown affinity {affinity!r}")

    X = check_data(X, min_rows=3)
    Xs = _subsample(X, sample_size, seed)
    D2 = pairwise_sq_distances(Xs)
    if not np.any(D2 > 0):
        return KEstimate("local_structure", 1, {"sample_size": Xs.shape[0]},
                         ["degenerate data: all sampled rows are identical"])
    if isinstance(sigma, str) and sigma == "multiscale":
        scales = sorted((float(f) for f in sigma_scales), reverse=True)
        if not scales or scales[-1] <= 0:
            raise ValueError("sigma_scales must be positive and non-empty")
        med = median_heuristic(D2)
        runs = []
        votes: Counter = Counter()
        for f in scales:
            runs.append(_eigengap_k(similarity_from_distances(D2, med * f, kernel), k_max, eigen_method))
            votes[runs[-1][0]] += 1
            # A strict majority cannot be overturned by the remaining scales.
            if votes[runs[-1][0]] * 2 > len(scales):
                break
        top = max(votes.values())
        pick = next(i for i, r in enumerate(runs) if votes[r[0]] == top)
        k, spectrum, limit = runs[pick]
        diag = {"sample_size": Xs.shape[0], "sigma": med * scales[pick], "kernel": kernel,
                "spectrum": spectrum, "k_max": limit,
                "votes": [{"sigma": med * f, "k": r[0]} for f, r in zip(scales, runs)]}
        return KEstimate("local_structure", k, diag)

    sim = similarity_from_distances(D2, sigma, kernel)
    k, spectrum, limit = _eigengap_k(sim, k_max, eigen_method)
    return KEstimate(
        "local_structure",
        k,
        {"sample_size": sim.n, "sigma": sim.sigma, "kernel": sim.kernel, "spectrum": spectrum,
         "k_max": limit},
    )


# ---------------------------------------------------------------------------
# Compactness and overlap
# ---------------------------------------------------------------------------


@dataclass
class CcrCoiScore:
    k: int
    ccr_raw: float
    coi_raw: float
    ccr: float
    coi: float

    @property
    def combined(self) -> float:
        return self.ccr + self.coi

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "ccr_raw": self.ccr_raw,
            "coi_raw": self.coi_raw,
            "ccr": self.ccr,
            "coi": self.coi,
            "combined": self.combined,
        }


def _members(result: ClusteringResult):
    labels = np.asarray(result.labels)
    return [np.flatnonzero(labels == i) for i in range(result.k)]


def compute_ccr(X, result: ClusteringResult, variant: str = "variance") -> float:
    """Cluster compactness.

    ``variance`` is the mean over clusters of the mean squared distance to the
    centroid. ``ratio`` divides the summed per-cluster average pairwise
    distance by the summed per-cluster total pairwise distance.
    """
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(result.centroids, dtype=np.float64)
    groups = _members(result)
    if any(g.size == 0 for g in groups):
        raise ValueError("CCR undefined with an empty cluster")
    if variant == "variance":
        var = [float(((X[g] - C[i]) ** 2).sum(axis=1).mean()) for i, g in enumerate(groups)]
        return float(np.mean(var))
    if variant == "ratio":
        avg_sum = total_sum = 0.0
        for g in groups:
            if g.size < 2:
                continue
            P = X[g]
            diff = P[:, None, :] - P[None, :, :]
            dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            total = dist[np.triu_indices(g.size, 1)].sum()
            total_sum += total
            avg_sum += total / (g.size * (g.size - 1) / 2)
        return float(avg_sum / total_sum) if total_sum > 0 else 0.0
    raise ValueError(f"unknown CCR variant {variant!r}")


def compute_coi(
    X,
    result: ClusteringResult,
    epsilon: float = DEFAULT_EPSILON,
    variant: str = "inverse_distance",
    aggregate: str = "sum",
) -> float:
    """Cluster overlap.

    ``inverse_distance`` combines ``1 / (|mu_i - mu_j| + epsilon)`` over
    centroid pairs, by sum or by max (the closest pair only).
    ``misclassified_fraction`` is the share of points strictly closer to some
    other centroid than to their own.
    """
    C = np.asarray(result.centroids, dtype=np.float64)
    k = C.shape[0]
    if variant == "inverse_distance":
        if k < 2:
            raise ValueError("inverse-distance COI needs at least 2 clusters")
        if epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if aggregate not in ("sum", "max"):
            raise ValueError(f"aggregate must be 'sum' or 'max', got {aggregate!r}")
        terms = []
        for i in range(k - 1):
            for j in range(i + 1, k):
                denom = math.sqrt(float(((C[i] - C[j]) ** 2).sum())) + epsilon
                if denom == 0:
                    raise ZeroDivisionError(f"centroids {i} and {j} coincide and epsilon is 0")
                terms.append(1.0 / denom)
        return math.fsum(terms) if aggregate == "sum" else max(terms)
    if variant == "misclassified_fraction":
        X = np.asarray(X, dtype=np.float64)
        labels = np.asarray(result.labels)
        d2 = center_sq_distances(X, C)
        own = d2[np.arange(X.shape[0]), labels]
        d2[np.arange(X.shape[0]), labels] = np.inf
        return float(np.mean(d2.min(axis=1) < own)) if k > 1 else 0.0
    raise ValueError(f"unknown COI variant {variant!r}")


def _minmax(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def _fits_for(X, k_values, cfg, fits):
    fits = {} if fits is None else fits
    for k in k_values:
        if k not in fits:
            fits[k] = fit_kmeans(X, k, cfg)
    return fits


NORMALIZE_MODES = ("scale", "minmax", "none")


def estimate_ccr_coi(
    X,
    k_range: Optional[Iterable[int]] = None,
    cfg: Optional[KMeansConfig] = None,
    epsilon: float = DEFAULT_EPSILON,
    variant: str = "inverse_distance",
    ccr_variant: str = "variance",
    normalize: str = "scale",
    aggregate: str = "max",
    fits: Optional[dict] = None,
) -> KEstimate:
    """Pick the k minimizing compactness plus overlap.

    normalize
        ``"scale"`` makes both terms unitless per k: the variance CCR is
        divided by the total variance of ``X`` and an inverse-distance COI is
        multiplied by the RMS cluster radius ``sqrt(CCR)``. ``"minmax"`` maps
        each term onto [0, 1] across the scanned range. ``"none"`` adds the raw
        values.

    Ties go to the smallest k. ``fits`` may carry K-Means results keyed by k to
    reuse.
    """
    if normalize not in NORMALIZE_MODES:
        raise ValueError(f"normalize must be one of {NORMALIZE_MODES}, got {normalize!r}")
    X = check_data(X)
    n = X.shape[0]
    k_values = sorted(set(default_k_range(n, 2) if k_range is None else k_range))
    if not k_values:
        raise ValueError("empty k_range")
    if k_values[0] < 2 or k_values[-1] > n:
        raise ValueError(f"k_range must lie within [2, {n}]")
    fits = _fits_for(X, k_values, cfg or KMeansConfig(), fits)

    ccr = np.array([compute_ccr(X, fits[k], ccr_variant) for k in k_values])
    coi = np.array([compute_coi(X, fits[k], epsilon, variant, aggregate) for k in k_values])
    if normalize == "minmax":
        ccr_n, coi_n = _minmax(ccr), _minmax(coi)
    elif normalize == "none":
        ccr_n, coi_n = ccr, coi
    else:
        ccr_n, coi_n = _scale_terms(X, k_values, fits, ccr, coi, ccr_variant, variant)
    rows = [CcrCoiScore(k, float(a), float(b), float(c), float(d))
            for k, a, b, c, d in zip(k_values, ccr, coi, ccr_n, coi_n)]
    best = min(rows, key=lambda r: (r.combined, r.k))
    return KEstimate(
        "ccr_coi",
        best.k,
        {"scores": rows, "normalize": normalize, "variant": variant,
         "ccr_variant": ccr_variant, "aggregate": aggregate},
    )


def _scale_terms(X, k_values, fits, ccr, coi, ccr_variant, variant):
    total_var = float(((X - X.mean(axis=0)) ** 2).sum(axis=1).mean())
    if ccr_variant == "variance":
        within = ccr
        ccr_n = ccr / total_var if total_var > 0 else np.zeros_like(ccr)
    else:
        within = np.array([compute_ccr(X, fits[k], "variance") for k in k_values])
        ccr_n = ccr
    coi_n = coi * np.sqrt(within) if variant == "inverse_distance" else coi
    return ccr_n, coi_n


# ---------------------------------------------------------------------------
# Gap statistic
# ---------------------------------------------------------------------------


@dataclass
class GapReport:
    k_values: list
    log_wk: np.ndarray
    expected_log_wk_star: np.ndarray
    s_k: np.ndarray
    B: int
    ref_log_wk: np.ndarray  # shape (B, len(k_values))
    selected_k: int = 0
    warnings: list = field(default_factory=list)

    @property
    def gap(self) -> np.ndarray:
        return self.expected_log_wk_star - self.log_wk

    def to_dict(self) -> dict:
        return {
            "k_values": [int(k) for k in self.k_values],
            "log_wk": self.log_wk.tolist(),
            "expected_log_wk_star": self.expected_log_wk_star.tolist(),
            "gap": self.gap.tolist(),
            "s_k": self.s_k.tolist(),
            "B": self.B,
            "selected_k": int(self.selected_k),
            "warnings": list(self.warnings),
        }


def reference_box(X: np.ndarray):
    """Per-column bounds of ``X``; zero-width columns are widened slightly."""
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    flat = hi <= lo
    notes = []
    if np.any(flat):
        pad = 1e3 * np.finfo(np.float64).eps * np.maximum(1.0, np.abs(lo[flat]))
        lo = lo.copy()
        hi = hi.copy()
        lo[flat] -= pad
        hi[flat] += pad
        notes.append(f"zero-width bounding box in columns {np.flatnonzero(flat).tolist()}")
    return lo, hi, notes


def compute_gap_statistics(
    X,
    k_range: Optional[Iterable[int]] = None,
    B: int = DEFAULT_REFERENCES,
    cfg: Optional[KMeansConfig] = None,
    seed: int = 0,
    ref_cfg: Optional[KMeansConfig] = None,
    fits: Optional[dict] = None,
    stop_early: bool = False,
) -> GapReport:
    """Gap statistic against uniform reference sets in the bounding box.

    Reference set ``b`` is drawn from ``default_rng([seed, b])`` and clustered
    for every k. ``s_k`` is the population standard deviation of the
    reference log-dispersions times ``sqrt(1 + 1/B)``. ``ref_cfg`` controls the
    K-Means runs on reference data and defaults to ``cfg``.

    With ``stop_early`` the scan ends as soon as the 1-SE rule fires, so the
    report covers only the scanned prefix of ``k_range``. The selected k is
    the same as with a full scan.
    """
    X = check_data(X)
    n, d = X.shape
    if B < 1:
        raise ValueError("B must be >= 1")
    k_values = sorted(set(default_k_range(n, 1) if k_range is None else k_range))
    if not k_values:
        raise ValueError("empty k_range")
    if k_values[0] < 1 or k_values[-1] > n:
        raise ValueError(f"k_range must lie within [1, {n}]")
    cfg = cfg or KMeansConfig()
    ref_cfg = ref_cfg or cfg
    fits = {} if fits is None else fits

    lo, hi, notes = reference_box(X)
    for note in notes:
        warnings.warn(note, RuntimeWarning, stacklevel=2)
    refs = [np.random.default_rng([seed, b]).uniform(lo, hi, size=(n, d)) for b in range(B)]
    scale = math.sqrt(1.0 + 1.0 / B)

    log_wk, ref_cols, gap, s = [], [], [], []
    for j, k in enumerate(k_values):
        if k not in fits:
            fits[k] = fit_kmeans(X, k, cfg)
        log_wk.append(math.log(max(fits[k].dispersion, _LOG_FLOOR)))
        col = np.array([math.log(max(fit_kmeans(Xb, k, ref_cfg).dispersion, _LOG_FLOOR)) for Xb in refs])
        ref_cols.append(col)
        gap.append(col.mean() - log_wk[-1])
        s.append(float(np.sqrt(((col - col.mean()) ** 2).mean())) * scale)
        if stop_early and j > 0 and gap[j - 1] >= gap[j] - s[j]:
            break

    ref = np.column_stack(ref_cols)
    expected = ref.mean(axis=0)
    sd = np.sqrt(((ref - expected) ** 2).mean(axis=0))
    m = ref.shape[1]
    report = GapReport(k_values[:m], np.array(log_wk), expected, sd * scale, B, ref, warnings=notes)
    report.selected_k = select_k_gap(report)
    return report


def select_k_gap(report: GapReport) -> int:
    """Smallest k with ``Gap(k) >= Gap(k+1) - s(k+1)``, else the argmax of Gap."""
    gap = np.asarray(report.gap)
    if gap.size == 0:
        raise ValueError("empty gap report")
    s = np.asarray(report.s_k)
    for i in range(gap.size - 1):
        if gap[i] >= gap[i + 1] - s[i + 1]:
            return int(report.k_values[i])
    return int(report.k_values[int(np.argmax(gap))])


def estimate_gap(X, k_range=None, B=DEFAULT_REFERENCES, cfg=None, seed=0, ref_cfg=None, fits=None,
                 stop_early=False):
    report = compute_gap_statistics(X, k_range, B, cfg, seed, ref_cfg, fits, stop_early)
    return KEstimate("gap", report.selected_k, {"report": report}, list(report.warnings))


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FusionConfig:
    weights: tuple = DEFAULT_WEIGHTS

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if len(w) != len(METHODS):
            raise ValueError(f"expected {len(METHODS)} weights, got {len(w)}")
        if any(v < 0 or not math.isfinite(v) for v in w):
            raise ValueError("weights must be finite and non-negative")
        if sum(w) <= 0:
            raise ValueError("weights must not all be zero")
        object.__setattr__(self, "weights", w)

    def normalized(self) -> tuple:
        total = math.fsum(self.weights)
        return tuple(v / total for v in self.weights)


def round_half_away(x: float) -> int:
    # The slack absorbs summation error so 2.4999999999999996 still rounds up.
    slack = 1e-9 * max(1.0, abs(x))
    return int(math.copysign(math.floor(abs(x) + 0.5 + slack), x))


def fuse_estimates(estimates, cfg: FusionConfig | Sequence[float] | None = None) -> int:
    """Weighted average of the four estimates, rounded half away from zero.

    ``estimates`` is a mapping from method name to k (or :class:`KEstimate`),
    a sequence of four :class:`KEstimate`, or four integers in the order
    density, local structure, CCR-COI, gap.
    """
    if cfg is None:
        cfg = FusionConfig()
    elif not isinstance(cfg, FusionConfig):
        cfg = FusionConfig(tuple(cfg))
    ks = _ordered_ks(estimates)
    total = math.fsum(w * k for w, k in zip(cfg.normalized(), ks))
    return max(1, round_half_away(total))


def _ordered_ks(estimates) -> list:
    if isinstance(estimates, Mapping):
        missing = [m for m in METHODS if m not in estimates]
        if missing:
            raise ValueError(f"missing estimates for {missing}")
        vals = [estimates[m] for m in METHODS]
        return [int(v.k if isinstance(v, KEstimate) else v) for v in vals]
    items = list(estimates)
    if items and all(isinstance(e, KEstimate) for e in items):
        by = {e.method: e for e in items}
        if len(by) != len(items):
            raise ValueError("duplicate estimator methods")
        return _ordered_ks(by)
    if len(items) != len(METHODS):
        raise ValueError(f"expected {len(METHODS)} estimates, got {len(items)}")
    return [int(k) for k in items]


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


def derived_seeds(seed: int) -> dict:
    """Per-stage seeds derived from one master seed."""
    return {"density": seed, "local_structure": seed + 1, "clustering": seed + 2, "gap_reference": seed + 3}


@dataclass
class CasiResult:
    estimates: dict
    weights: tuple
    k_final: int
    seeds: dict
    clustering: Optional[ClusteringResult] = None
    config: dict = field(default_factory=dict)

    @property
    def warnings(self) -> list:
        return [f"{m}: {w}" for m, e in self.estimates.items() for w in e.warnings]

    def to_dict(self, diagnostics: bool = False) -> dict:
        out = {
            "k_final": int(self.k_final),
            "estimates": {m: int(e.k) for m, e in self.estimates.items()},
            "weights": dict(zip(METHODS, (float(w) for w in self.weights))),
            "seeds": dict(self.seeds),
            "config": _jsonable(self.config),
            "warnings": self.warnings,
        }
        if diagnostics:
            out["diagnostics"] = {m: e.to_dict()["diagnostics"] for m, e in self.estimates.items()}
        if self.clustering is not None:
            c = self.clustering
            out["clustering"] = {
                "k": int(c.k),
                "cluster_sizes": c.cluster_sizes().tolist(),
                "centroids": c.centroids.tolist(),
                "dispersion": float(c.dispersion),
                "iterations_run": int(c.iterations_run),
            }
        return out


def _method_runners(seed, k_max, sample_size, n_refs, kmeans_cfg, ref_n_init, sigma) -> dict:
    seeds = derived_seeds(seed)
    cfg = kmeans_cfg.replace(seed=seeds["clustering"])
    ref_cfg = cfg.replace(n_init=ref_n_init)

    def clustering_sample(X):
        Xc = _subsample(X, sample_size, seeds["clustering"])
        return Xc, max(2, min(k_max, Xc.shape[0] - 1))

    def ccr_coi(X, fits=None):
        Xc, top = clustering_sample(X)
        return estimate_ccr_coi(Xc, range(2, top + 1), cfg, fits=fits)

    def gap(X, fits=None):
        Xc, top = clustering_sample(X)
        return estimate_gap(Xc, range(1, top + 1), n_refs, cfg, seeds["gap_reference"], ref_cfg, fits,
                            stop_early=True)

    return {
        "density": lambda X: estimate_density_based(X, sample_size, seeds["density"]),
        "local_structure": lambda X: estimate_local_structure(
            X, sample_size, seeds["local_structure"], sigma=sigma, k_max=k_max),
        "ccr_coi": ccr_coi,
        "gap": gap,
    }


def _run_estimators(X, runners) -> dict:
    # CCR-COI and the gap statistic see the same sample, so they share fits.
    fits: dict = {}
    return {
        "density": runners["density"](X),
        "local_structure": runners["local_structure"](X),
        "ccr_coi": runners["ccr_coi"](X, fits),
        "gap": runners["gap"](X, fits),
    }


def estimate_k(
    X,
    weights: Sequence[float] = DEFAULT_WEIGHTS,
    seed: int = 0,
    k_max: int = DEFAULT_K_MAX,
    sample_size: Optional[int] = DEFAULT_SAMPLE_SIZE,
    n_refs: int = DEFAULT_REFERENCES,
    kmeans_cfg: Optional[KMeansConfig] = None,
    ref_n_init: int = 1,
    sigma="multiscale",
    batch_size: Optional[int] = None,
    cluster: bool = False,
) -> CasiResult:
    """Run the four estimators and fuse their answers.

    Every randomized stage draws from a seed derived from ``seed`` (see
    :func:`derived_seeds`). The K-Means based estimators work on one shared
    row sample of at most ``sample_size`` rows. When ``batch_size`` is given,
    each estimator runs on contiguous row batches and its k is the rounded
    mean over batches. ``cluster=True`` also fits K-Means on all of ``X`` at the
    fused k.
    """
    fusion = weights if isinstance(weights, FusionConfig) else FusionConfig(tuple(weights))
    X = check_data(X, min_rows=3)
    kmeans_cfg = kmeans_cfg or KMeansConfig()
    runners = _method_runners(seed, k_max, sample_size, n_refs, kmeans_cfg, ref_n_init, sigma)
    if batch_size is None or batch_size >= X.shape[0]:
        estimates = _run_estimators(X, runners)
    else:
        estimates = _batched_estimates(X, batch_size, runners)
    k_final = fuse_estimates(estimates, fusion)
    clustering = None
    if cluster:
        clustering = fit_kmeans(X, min(k_final, X.shape[0]),
                                kmeans_cfg.replace(seed=derived_seeds(seed)["clustering"]))
    config = {"weights": list(fusion.weights), "seed": seed, "k_max": k_max,
              "sample_size": sample_size, "n_refs": n_refs, "ref_n_init": ref_n_init,
              "sigma": sigma, "batch_size": batch_size,
              "kmeans": {"n_init": kmeans_cfg.n_init, "max_iter": kmeans_cfg.max_iter,
                         "tol": kmeans_cfg.tol, "init": kmeans_cfg.init}}
    return CasiResult(estimates, fusion.normalized(), k_final, derived_seeds(seed), clustering, config)


def _batched_estimates(X, batch_size, runners) -> dict:
    plan = BatchPlan.for_rows(X.shape[0], batch_size)
    if any(sl.stop - sl.start < 3 for sl in plan.slices(X.shape[0])):
        raise ValueError("every batch needs at least 3 rows")
    out = {}
    for m in METHODS:
        ks, notes = [], []

        def run(Xb, m=m):
            e = runners[m](Xb)
            ks.append(e.k)
            notes.extend(e.warnings)
            return e.k

        mean_k = process_in_batches(X, run, batch_size)
        out[m] = KEstimate(m, max(1, round_half_away(mean_k)),
                           {"batch_size": batch_size, "batch_ks": ks, "batch_mean": mean_k}, notes)
    return out


class CASI(ClusterMixin, BaseEstimator):
    """K-Means whose cluster count is chosen by the fused estimators.

    After ``fit``: ``result_`` holds the :class:`CasiResult`, ``n_clusters_``
    the fused k, and ``labels_`` / ``cluster_centers_`` the final K-Means fit
    on all rows.
    """

    def __init__(self, weights=DEFAULT_WEIGHTS, k_max=DEFAULT_K_MAX, sample_size=DEFAULT_SAMPLE_SIZE,
                 n_refs=DEFAULT_REFERENCES, sigma="multiscale", n_init=5, max_iter=300, tol=1e-6,
                 ref_n_init=1, batch_size=None, random_state=0):
        self.weights = weights
        self.k_max = k_max
        self.sample_size = sample_size
        self.n_refs = n_refs
        self.sigma = sigma
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.ref_n_init = ref_n_init
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_data(X, min_rows=3)
        cfg = KMeansConfig(n_init=self.n_init, max_iter=self.max_iter, tol=self.tol)
        self.result_ = estimate_k(
            X, self.weights, int(self.random_state or 0), self.k_max, self.sample_size, self.n_refs,
            cfg, self.ref_n_init, self.sigma, self.batch_size, cluster=True,
        )
        fit = self.result_.clustering
        self.n_clusters_ = self.result_.k_final
        self.estimates_ = {m: e.k for m, e in self.result_.estimates.items()}
        self.labels_ = fit.labels
        self.cluster_centers_ = fit.centroids
        self.inertia_ = fit.dispersion
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return np.argmin(center_sq_distances(check_data(X), self.cluster_centers_), axis=1)
