"""Dense kernels shared by the estimators.

Pairwise distances, Gaussian similarity graphs, the unnormalized graph
Laplacian, a cyclic Jacobi eigensolver, 1-D PCA projection and a 1-D Gaussian
KDE with valley detection.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass, field

import numpy as np

JACOBI_TOL = 1e-10
JACOBI_MAX_SWEEPS = 100
# Matrices larger than this go to LAPACK under method="auto".
JACOBI_AUTO_MAX_N = 48

DEFAULT_GRID_SIZE = 512
DEFAULT_SMOOTHING_WINDOW = 5
DEFAULT_PROMINENCE = 0.05
# Upper bound on the refined KDE grid.
MAX_GRID_SIZE = 1 << 16


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


class ConvergenceError(ArithmeticError):
    """The eigensolver hit its sweep cap without meeting the tolerance."""


# ---------------------------------------------------------------------------
# Distance-evaluation accounting
# ---------------------------------------------------------------------------

_counter: contextvars.ContextVar["DistanceCounter | None"] = contextvars.ContextVar(
    "casi_distance_counter", default=None
)


@dataclass
class DistanceCounter:
    """Tally of point-to-point or point-to-centroid distance evaluations."""

    total: int = 0
    by_source: dict = field(default_factory=dict)

    def add(self, source: str, count: int) -> None:
        self.total += int(count)
        self.by_source[source] = self.by_source.get(source, 0) + int(count)


@contextlib.contextmanager
def count_distances():
    """Collect distance-evaluation counts from code run inside the block."""
    counter = DistanceCounter()
    token = _counter.set(counter)
    try:
        yield counter
    finally:
        _counter.reset(token)


def tally(source: str, count: int) -> None:
    counter = _counter.get()
    if counter is not None:
        counter.add(source, count)


# ---------------------------------------------------------------------------
# Distances and similarity
# ---------------------------------------------------------------------------


def sq_distances_to(X: np.ndarray, C: np.ndarray, chunk: int = 1 << 22) -> np.ndarray:
    """Squared Euclidean distances from every row of ``X`` to every row of ``C``.

    Computed from explicit differences so equal points give exactly zero.
    """
    n, d = X.shape
    k = C.shape[0]
    out = np.empty((n, k))
    step = max(1, chunk // max(1, k * d))
    for i in range(0, n, step):
        diff = X[i : i + step, None, :] - C[None, :, :]
        out[i : i + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def pairwise_sq_distances(X) -> np.ndarray:
    """Symmetric matrix of squared Euclidean distances with an exact zero diagonal."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    D = sq_distances_to(X, X)
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    tally("pairwise", n * (n - 1) // 2)
    return D


def median_heuristic(D2: np.ndarray) -> float:
    """Median of the nonzero pairwise distances, from a squared-distance matrix."""
    iu = np.triu_indices(D2.shape[0], k=1)
    dist = np.sqrt(D2[iu])
    dist = dist[dist > 0]
    if dist.size == 0:
        raise ValueError("median heuristic undefined: all rows are identical (or closer than float resolution)")
    return float(np.median(dist))


@dataclass
class SimilarityMatrix:
    """Gaussian affinity matrix and the bandwidth that produced it."""

    S: np.ndarray
    sigma: float
    kernel: str = "rbf"

    @property
    def n(self) -> int:
        return self.S.shape[0]


def similarity_matrix(X, sigma="median-heuristic", kernel: str = "rbf") -> SimilarityMatrix:
    """Fully connected similarity graph.

    Parameters
    ----------
    X : array of shape (n, d)
    sigma : float or "median-heuristic"
        Kernel bandwidth. The heuristic takes the median nonzero pairwise
        distance.
    kernel : {"rbf", "laplace"}
        ``rbf`` is ``exp(-|xi - xj|^2 / (2 sigma^2))``; ``laplace`` is
        ``exp(-|xi - xj| / sigma)``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("similarity matrix needs at least 2 rows")
    return similarity_from_distances(pairwise_sq_distances(X), sigma, kernel)


def similarity_from_distances(D2: np.ndarray, sigma="median-heuristic", kernel: str = "rbf") -> SimilarityMatrix:
    """Kernel similarities from a precomputed squared-distance matrix."""
    if isinstance(sigma, str):
        if sigma != "median-heuristic":
            raise ValueError(f"unknown sigma rule {sigma!r}")
        sigma = median_heuristic(D2)
    sigma = float(sigma)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if kernel == "rbf":
        S = np.exp(-D2 / (2.0 * sigma * sigma))
    elif kernel == "laplace":
        S = np.exp(-np.sqrt(D2) / sigma)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    np.fill_diagonal(S, 1.0)
    return SimilarityMatrix(S, sigma, kernel)


def laplacian(S) -> np.ndarray:
    """Unnormalized graph Laplacian ``deg - S``."""
    S = S.S if isinstance(S, SimilarityMatrix) else np.asarray(S, dtype=np.float64)
    L = -S.copy()
    # Degree minus self-similarity: the diagonal cancels exactly.
    off = S.sum(axis=1) - np.diag(S)
    np.fill_diagonal(L, off)
    return L


# ---------------------------------------------------------------------------
# Symmetric eigenvalues
# ---------------------------------------------------------------------------


@dataclass
class EigenSpectrum:
    eigenvalues: np.ndarray  # ascending
    method: str = "jacobi"
    sweeps: int = 0

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.eigenvalues)

    def to_dict(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "gaps": self.gaps.tolist(),
            "method": self.method,
            "sweeps": self.sweeps,
        }


def _off_diagonal_norm(A: np.ndarray) -> float:
    B = A.copy()
    np.fill_diagonal(B, 0.0)
    return float(np.linalg.norm(B))


def jacobi_eigh(M, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS, vectors=False):
    """Cyclic Jacobi rotations for a real symmetric matrix.

    Returns ``(eigenvalues, eigenvectors or None, sweeps)`` with eigenvalues in
    ascending order. Stops when the off-diagonal Frobenius norm drops below
    ``tol * |M|_F``, so the test does not depend on the matrix's scale.
    """
    A = np.array(M, dtype=np.float64)
    n = A.shape[0]
    V = np.eye(n) if vectors else None
    threshold = tol * float(np.linalg.norm(A))
    sweeps = 0
    while True:
        off = _off_diagonal_norm(A)
        if off <= threshold:
            break
        if sweeps >= max_sweeps:
            raise ConvergenceError(
                f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal {off:.3e})"
            )
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = A[:, p].copy()
                col_q = A[:, q]
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :]
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
                if V is not None:
                    vp = V[:, p].copy()
                    vq = V[:, q]
                    V[:, p] = c * vp - s * vq
                    V[:, q] = s * vp + c * vq
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], (V[:, order] if V is not None else None), sweeps


def _check_symmetric(M, atol=1e-9) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=0.0, atol=atol * max(1.0, float(np.abs(M).max(initial=0)))):
        raise ValueError("matrix is not symmetric")
    return M


def symmetric_eigenvalues(M, method: str = "auto") -> EigenSpectrum:
    """Ascending eigenvalues of a symmetric matrix.

    ``method="jacobi"`` always uses the Jacobi solver, ``"lapack"`` uses
    ``numpy.linalg.eigvalsh``, and ``"auto"`` picks Jacobi for small matrices.
    """
    M = _check_symmetric(M)
    n = M.shape[0]
    if method == "auto":
        method = "jacobi" if n <= JACOBI_AUTO_MAX_N else "lapack"
    if method == "jacobi":
        w, _, sweeps = jacobi_eigh(M)
        return EigenSpectrum(w, "jacobi", sweeps)
    if method == "lapack":
        w = np.linalg.eigvalsh(0.5 * (M + M.T))
        return EigenSpectrum(np.sort(w), "lapack", 0)
    raise ValueError(f"unknown eigen method {method!r}")


# ---------------------------------------------------------------------------
# PCA and KDE
# ---------------------------------------------------------------------------


def pca_project_1d(X) -> np.ndarray:
    """Scores of the centered data on its leading principal axis.

    The axis sign is fixed so that its largest-magnitude loading is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("PCA projection needs at least 2 rows")
    Xc = X - X.mean(axis=0)
    if not np.any(Xc):
        raise ValueError("all rows are identical: no principal axis")
    cov = Xc.T @ Xc / X.shape[0]
    if cov.shape[0] <= JACOBI_AUTO_MAX_N:
        _, V, _ = jacobi_eigh(cov, vectors=True)
    else:
        _, V = np.linalg.eigh(cov)
    axis = V[:, -1]
    if axis[np.argmax(np.abs(axis))] < 0:
        axis = -axis
    return Xc @ axis


def silverman_bandwidth(values) -> float:
    """Silverman's rule ``0.9 * min(sd, IQR / 1.34) * n^(-1/5)``.

    Falls back to whichever spread estimate is nonzero, and to 1.0 when the
    sample has no spread beyond rounding noise.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    n = x.size
    if n < 2:
        return 1.0
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25) / 1.34
    # Spread at rounding-noise level counts as zero.
    noise = 1e-12 * max(1.0, float(np.abs(x).max()))
    spread = min(sd, iqr) if iqr > noise else sd
    if spread <= noise:
        return 1.0
    return 0.9 * spread * n ** (-0.2)


@dataclass
class DensityProfile:
    grid: np.ndarray
    density: np.ndarray
    smoothed: np.ndarray
    bandwidth: float
    valley_indices: list
    prominence: float = DEFAULT_PROMINENCE
    notes: list = field(default_factory=list)

    @property
    def peak_count(self) -> int:
        return len(self.valley_indices) + 1

    def integral(self) -> float:
        return float(_trapezoid(self.density, self.grid))

    def to_dict(self, include_curves: bool = True) -> dict:
        out = {
            "bandwidth": self.bandwidth,
            "valley_indices": list(self.valley_indices),
            "valley_positions": [float(self.grid[i]) for i in self.valley_indices],
            "peak_count": self.peak_count,
            "prominence": self.prominence,
            "notes": list(self.notes),
        }
        if include_curves:
            out["grid"] = self.grid.tolist()
            out["density"] = self.density.tolist()
            out["smoothed"] = self.smoothed.tolist()
        return out


def gaussian_kde_1d(values: np.ndarray, grid: np.ndarray, h: float, chunk: int = 1 << 21):
    n = values.size
    out = np.zeros(grid.size)
    step = max(1, chunk // max(1, n))
    norm = 1.0 / (n * h * math.sqrt(2.0 * math.pi))
    for i in range(0, grid.size, step):
        u = (grid[i : i + step, None] - values[None, :]) / h
        out[i : i + step] = np.exp(-0.5 * u * u).sum(axis=1) * norm
    return out


def moving_average(y: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with edge replication; even windows grow by one."""
    if window <= 1:
        return y.copy()
    if window % 2 == 0:
        window += 1
    half = window // 2
    padded = np.pad(y, half, mode="edge")
    kernel = np.full(window, 1.0 / window)
    return np.convolve(padded, kernel, mode="valid")


def _local_minima(y: np.ndarray) -> list:
    """Strict local minima; a flat bottom counts once, at its middle index."""
    idx = []
    g = y.size
    i = 1
    while i < g - 1:
        if y[i - 1] > y[i]:
            j = i
            while j + 1 < g and y[j + 1] == y[i]:
                j += 1
            if j + 1 < g and y[j + 1] > y[i]:
                idx.append((i + j) // 2)
            i = j + 1
        else:
            i += 1
    return idx


def _filter_shallow(y: np.ndarray, valleys: list, min_depth: float) -> list:
    """Drop the shallowest valley repeatedly until all flanking peaks clear it."""
    kept = list(valleys)
    while kept:
        bounds = [0] + kept + [y.size - 1]
        depths = []
        for j, v in enumerate(kept):
            left = y[bounds[j] : v + 1].max()
            right = y[v : bounds[j + 2] + 1].max()
            depths.append(min(left, right) - y[v])
        worst = int(np.argmin(depths))
        if depths[worst] >= min_depth:
            break
        kept.pop(worst)
    return kept


def kde_profile(
    values,
    h="silverman",
    grid_size: int = DEFAULT_GRID_SIZE,
    smoothing_window: int = DEFAULT_SMOOTHING_WINDOW,
    prominence: float = DEFAULT_PROMINENCE,
) -> DensityProfile:
    """Gaussian KDE of 1-D data on a uniform grid, with valley detection.

    The grid spans ``[min - 3h, max + 3h]`` and has at least ``grid_size``
    points; it is refined so the spacing never exceeds ``h``, which keeps the
    trapezoidal integral of the density close to one. When that would need
    more than ``MAX_GRID_SIZE`` points, or ``h`` is near the float resolution of
    the data, ``h`` is raised and a note is recorded. A valley is a strict
    local minimum of the smoothed curve whose flanking peaks both exceed it
    by at least ``prominence`` times the curve's maximum.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 1:
        raise ValueError("KDE needs at least one value")
    if grid_size < 3:
        raise ValueError("grid_size must be at least 3")
    if isinstance(h, str):
        if h != "silverman":
            raise ValueError(f"unknown bandwidth rule {h!r}")
        h = silverman_bandwidth(x)
    h = float(h)
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")

    notes = []
    span = float(x.max() - x.min())
    # Smallest h the capped grid can resolve: (span + 6h) / (MAX - 1) <= h.
    h_min = max(span / (MAX_GRID_SIZE - 7), 1e3 * np.finfo(np.float64).eps * max(1.0, float(np.abs(x).max())))
    if h < h_min:
        notes.append(f"bandwidth {h:.6g} raised to {h_min:.6g} to fit the grid")
        h = h_min
    lo, hi = float(x.min()) - 3.0 * h, float(x.max()) + 3.0 * h
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    g = max(grid_size, min(MAX_GRID_SIZE, int(math.ceil((hi - lo) / h)) + 1))
    grid = np.linspace(lo, hi, g)
    density = gaussian_kde_1d(x, grid, h)
    tally("kde", x.size * g)
    smoothed = moving_average(density, smoothing_window)
    candidates = _local_minima(smoothed)
    valleys = _filter_shallow(smoothed, candidates, prominence * float(smoothed.max()))
    return DensityProfile(grid, density, smoothed, h, valleys, prominence, notes)
