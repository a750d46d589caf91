"""Lloyd's K-Means with k-means++ seeding and deterministic restarts."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import check_data
from .numerics import tally


def augment(X: np.ndarray) -> np.ndarray:
    """``[X, |x|^2, 1]`` so one product with :func:`_augment_centers` yields distances."""
    X = np.asarray(X, dtype=np.float64)
    return np.hstack([X, np.einsum("ij,ij->i", X, X)[:, None], np.ones((X.shape[0], 1))])


def _augment_centers(C: np.ndarray) -> np.ndarray:
    return np.hstack([-2.0 * C, np.ones((C.shape[0], 1)), np.einsum("ij,ij->i", C, C)[:, None]])


def center_sq_distances(X: np.ndarray, C: np.ndarray, XA: Optional[np.ndarray] = None) -> np.ndarray:
    """Squared distances to centroids via the Gram expansion, clipped at zero.

    Assignment and every "nearest centroid" check go through this one routine,
    so labels and later consistency checks agree to the last bit. ``XA`` is
    ``augment(X)`` when the caller already has it.
    """
    if XA is None:
        XA = augment(X)
    d2 = XA @ _augment_centers(np.asarray(C, dtype=np.float64)).T
    tally("kmeans", d2.size)
    np.maximum(d2, 0.0, out=d2)
    return d2


@dataclass(frozen=True)
class KMeansConfig:
    n_init: int = 5
    max_iter: int = 300
    tol: float = 1e-6
    seed: int = 0
    init: str = "k-means++"

    def __post_init__(self):
        if self.n_init < 1:
            raise ValueError(f"n_init must be >= 1, got {self.n_init}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.tol < 0:
            raise ValueError(f"tol must be >= 0, got {self.tol}")
        if self.init not in ("k-means++", "random"):
            raise ValueError(f"init must be 'k-means++' or 'random', got {self.init!r}")

    def replace(self, **changes) -> "KMeansConfig":
        return KMeansConfig(**{**asdict(self), **changes})


@dataclass
class ClusteringResult:
    k: int
    labels: np.ndarray
    centroids: np.ndarray
    dispersion: float
    iterations_run: int
    restart: int = 0

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "assignments": self.labels.tolist(),
            "centroids": self.centroids.tolist(),
            "dispersion": self.dispersion,
            "iterations_run": self.iterations_run,
        }


def dispersion(X, result: ClusteringResult) -> float:
    """Total squared distance of each point to its assigned centroid."""
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(result.centroids, dtype=np.float64)
    if X.ndim != 2 or C.ndim != 2 or X.shape[1] != C.shape[1]:
        raise ValueError(f"dimension mismatch: data {X.shape}, centroids {C.shape}")
    if len(result.labels) != X.shape[0]:
        raise ValueError("assignment count does not match the number of rows")
    diff = X - C[result.labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator, XA) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = center_sq_distances(X, centers[:1], XA)[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[j] = X[idx]
        np.minimum(closest, center_sq_distances(X, centers[j : j + 1], XA)[:, 0], out=closest)
    return centers


def _assign(X: np.ndarray, centers: np.ndarray, XA):
    """Nearest-centroid labels (lowest index on ties) with empty-cluster repair."""
    d2 = center_sq_distances(X, centers, XA)
    labels = np.argmin(d2, axis=1)
    best = d2[np.arange(X.shape[0]), labels]
    k = centers.shape[0]
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        # Farthest point among clusters that can spare one.
        movable = counts[labels] > 1
        cand = np.where(movable, best, -1.0)
        i = int(np.argmax(cand))
        counts[labels[i]] -= 1
        labels[i] = j
        counts[j] = 1
        centers[j] = X[i]
        best[i] = 0.0
    return labels, float(best.sum())


def _centroids(X: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    onehot = np.zeros((k, X.shape[0]))
    onehot[labels, np.arange(X.shape[0])] = 1.0
    return (onehot @ X) / onehot.sum(axis=1)[:, None]


def _lloyd(X, k, cfg: KMeansConfig, rng, callback=None):
    n = X.shape[0]
    XA = augment(X)
    if cfg.init == "k-means++":
        centers = _kmeans_plus_plus(X, k, rng, XA)
    else:
        centers = X[rng.choice(n, size=k, replace=False)].copy()

    labels, inertia = _assign(X, centers, XA)
    it = 1
    if callback is not None:
        callback(it, inertia)
    while it < cfg.max_iter:
        new_centers = _centroids(X, labels, k)
        shift = float(((new_centers - centers) ** 2).sum())
        centers = new_centers
        new_labels, inertia = _assign(X, centers, XA)
        it += 1
        if callback is not None:
            callback(it, inertia)
        stable = np.array_equal(new_labels, labels)
        labels = new_labels
        if stable or shift <= cfg.tol:
            break
    return labels, centers, it


def fit_kmeans(
    X,
    k: int,
    cfg: Optional[KMeansConfig] = None,
    callback: Optional[Callable[[int, float], None]] = None,
) -> ClusteringResult:
    """Best-of-``n_init`` K-Means by lowest dispersion.

    Restart ``r`` draws from ``seed + r``. Labels in the result are always the
    nearest centroid (lowest index on exact ties) and no cluster is empty.
    ``callback(iteration, inertia)`` sees every assignment step.
    """
    cfg = cfg or KMeansConfig()
    X = check_data(X)
    n = X.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")

    best = None
    for r in range(cfg.n_init):
        rng = np.random.default_rng(cfg.seed + r)
        labels, centers, iters = _lloyd(X, k, cfg, rng, callback)
        res = ClusteringResult(k, labels, centers, 0.0, iters, r)
        res.dispersion = dispersion(X, res)
        if best is None or res.dispersion < best.dispersion:
            best = res
    return best


class KMeans(ClusterMixin, BaseEstimator):
    """Estimator front-end for :func:`fit_kmeans`."""

    def __init__(self, n_clusters=8, n_init=5, max_iter=300, tol=1e-6, init="k-means++", random_state=0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.init = init
        self.random_state = random_state

    def _config(self) -> KMeansConfig:
        return KMeansConfig(self.n_init, self.max_iter, self.tol, int(self.random_state or 0), self.init)

    def fit(self, X, y=None):
        X = check_data(X)
        self.result_ = fit_kmeans(X, self.n_clusters, self._config())
        self.labels_ = self.result_.labels
        self.cluster_centers_ = self.result_.centroids
        self.inertia_ = self.result_.dispersion
        self.n_iter_ = self.result_.iterations_run
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_data(X)
        return np.argmin(center_sq_distances(X, self.cluster_centers_), axis=1)

    def transform(self, X):
        check_is_fitted(self, "cluster_centers_")
        return np.sqrt(center_sq_distances(check_data(X), self.cluster_centers_))
