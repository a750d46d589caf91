"""Baseline k-selectors and cluster-quality indices.

Every index that evaluates distances reports how many it computed through
:func:`casi.numerics.tally`, so complexity can be checked without a clock.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .dataset import check_data
from .estimators import default_k_range
from .kmeans import ClusteringResult, KMeansConfig, fit_kmeans
from .numerics import sq_distances_to, tally

BASELINE_METHODS = ("wcss", "dbi", "silhouette_full", "silhouette_condensed")


@dataclass
class MethodCurve:
    method: str
    k_values: list
    scores: list
    selected_k: int

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "k_values": [int(k) for k in self.k_values],
            "scores": [float(s) for s in self.scores],
            "selected_k": int(self.selected_k),
        }


def _labels_of(result) -> np.ndarray:
    if isinstance(result, ClusteringResult):
        return np.asarray(result.labels)
    return np.asarray(result)


def select_by_score(k_values: Sequence[int], scores: Sequence[float], direction: str) -> int:
    """Best-scoring k; ties go to the smallest k."""
    if len(k_values) == 0:
        raise ValueError("empty curve")
    if len(k_values) != len(scores):
        raise ValueError("k_values and scores differ in length")
    s = np.asarray(scores, dtype=np.float64)
    if direction == "minimize":
        target = s.min()
    elif direction == "maximize":
        target = s.max()
    else:
        raise ValueError(f"direction must be 'minimize' or 'maximize', got {direction!r}")
    return int(min(k for k, v in zip(k_values, s) if v == target))


def elbow_k(k_values: Sequence[int], wcss: Sequence[float]) -> int:
    """Interior k maximizing ``W[k-1] - 2 W[k] + W[k+1]``; ties to the smallest k."""
    if len(k_values) < 3:
        raise ValueError("elbow rule needs at least 3 k values")
    w = np.asarray(wcss, dtype=np.float64)
    second = w[:-2] - 2.0 * w[1:-1] + w[2:]
    return int(k_values[1 + int(np.argmax(second))])


def _fits(X, k_values, cfg, fits):
    fits = {} if fits is None else fits
    for k in k_values:
        if k not in fits:
            fits[k] = fit_kmeans(X, k, cfg)
    return fits


def wcss_select(X, k_range: Optional[Iterable[int]] = None, cfg: Optional[KMeansConfig] = None,
                fits: Optional[dict] = None) -> MethodCurve:
    X = check_data(X)
    k_values = sorted(set(default_k_range(X.shape[0], 1) if k_range is None else k_range))
    if len(k_values) < 3:
        raise ValueError("WCSS elbow needs a k_range of at least 3 values")
    fits = _fits(X, k_values, cfg or KMeansConfig(), fits)
    w = [fits[k].dispersion for k in k_values]
    tally("wcss", X.shape[0] * len(k_values))
    return MethodCurve("wcss", k_values, w, elbow_k(k_values, w))


# ---------------------------------------------------------------------------
# Davies-Bouldin
# ---------------------------------------------------------------------------


def davies_bouldin(X, result: ClusteringResult) -> float:
    """Mean over clusters of the worst ``(s_i + s_j) / |mu_i - mu_j|``.

    ``s_i`` is the mean distance of cluster ``i``'s points to its centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = _labels_of(result)
    C = np.asarray(result.centroids, dtype=np.float64)
    k = C.shape[0]
    if k < 2:
        raise ValueError("Davies-Bouldin index needs at least 2 clusters")
    counts = np.bincount(labels, minlength=k)
    if np.any(counts == 0):
        raise ValueError(f"empty clusters: {np.flatnonzero(counts == 0).tolist()}")
    dist = np.sqrt(((X - C[labels]) ** 2).sum(axis=1))
    scatter = np.bincount(labels, weights=dist, minlength=k) / counts
    sep = np.sqrt(sq_distances_to(C, C))
    tally("dbi", X.shape[0] + k * (k - 1) // 2)
    worst = np.zeros(k)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            if sep[i, j] == 0:
                raise ZeroDivisionError(f"centroids {min(i, j)} and {max(i, j)} coincide")
            worst[i] = max(worst[i], (scatter[i] + scatter[j]) / sep[i, j])
    return float(worst.mean())


def dbi_select(X, k_range=None, cfg=None, fits=None) -> MethodCurve:
    X = check_data(X)
    k_values = sorted(set(default_k_range(X.shape[0], 2) if k_range is None else k_range))
    fits = _fits(X, k_values, cfg or KMeansConfig(), fits)
    scores = [davies_bouldin(X, fits[k]) for k in k_values]
    return MethodCurve("dbi", k_values, scores, select_by_score(k_values, scores, "minimize"))


# ---------------------------------------------------------------------------
# Silhouettes
# ---------------------------------------------------------------------------


def _silhouette_terms(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    denom = np.maximum(a, b)
    s = np.zeros_like(a)
    ok = denom > 0
    s[ok] = (b[ok] - a[ok]) / denom[ok]
    return s


def silhouette_samples_full(X, result, block_elems: int = 1 << 22) -> np.ndarray:
    """Per-point silhouette from all pairwise distances.

    Each unordered pair is evaluated once; distance sums per cluster are
    accumulated block by block so the ``n x n`` matrix is never stored.
    Points in singleton clusters score 0.
    """
    X = check_data(X)
    labels = _labels_of(result)
    n, d = X.shape
    uniq, lab = np.unique(labels, return_inverse=True)
    k = uniq.size
    if k < 2:
        raise ValueError("silhouette needs at least 2 non-empty clusters")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), lab] = 1.0
    sums = np.zeros((n, k))
    step = max(1, block_elems // max(1, n * d))
    for i0 in range(0, n, step):
        i1 = min(n, i0 + step)
        diff = X[i0:i1, None, :] - X[None, i0:, :]
        D = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        # Within the diagonal block keep only j > i.
        D[:, : i1 - i0] = np.triu(D[:, : i1 - i0], k=1)
        sums[i0:i1] += D @ onehot[i0:]
        sums[i0:] += D.T @ onehot[i0:i1]
    tally("silhouette_full", n * (n - 1) // 2)

    sizes = onehot.sum(axis=0)
    own = sizes[lab]
    a = np.where(own > 1, sums[np.arange(n), lab] / np.maximum(own - 1, 1), 0.0)
    mean_other = sums / sizes
    mean_other[np.arange(n), lab] = np.inf
    b = mean_other.min(axis=1)
    s = _silhouette_terms(a, b)
    s[own == 1] = 0.0
    return s


def silhouette_full(X, result) -> float:
    """Mean silhouette over all points (quadratic in n)."""
    return float(silhouette_samples_full(X, result).mean())


def silhouette_condensed(X, result: ClusteringResult) -> float:
    """Centroid-based silhouette: one distance per point and centroid.

    ``a`` is the distance to the point's own centroid and ``b`` the distance
    to the nearest other centroid.
    """
    X = check_data(X)
    labels = _labels_of(result)
    C = np.asarray(result.centroids, dtype=np.float64)
    k = C.shape[0]
    if k < 2:
        raise ValueError("condensed silhouette needs at least 2 clusters")
    n = X.shape[0]
    dist = np.sqrt(sq_distances_to(X, C))
    tally("silhouette_condensed", n * k)
    rows = np.arange(n)
    a = dist[rows, labels].copy()
    dist[rows, labels] = np.inf
    b = dist.min(axis=1)
    return float(_silhouette_terms(a, b).mean())


def silhouette_select(X, k_range=None, cfg=None, fits=None, condensed: bool = False) -> MethodCurve:
    X = check_data(X)
    k_values = sorted(set(default_k_range(X.shape[0], 2) if k_range is None else k_range))
    fits = _fits(X, k_values, cfg or KMeansConfig(), fits)
    metric = silhouette_condensed if condensed else silhouette_full
    scores = [metric(X, fits[k]) for k in k_values]
    name = "silhouette_condensed" if condensed else "silhouette_full"
    return MethodCurve(name, k_values, scores, select_by_score(k_values, scores, "maximize"))


SELECTORS = {
    "wcss": wcss_select,
    "dbi": dbi_select,
    "silhouette_full": silhouette_select,
    "silhouette_condensed": lambda X, k_range=None, cfg=None, fits=None: silhouette_select(
        X, k_range, cfg, fits, condensed=True
    ),
}
