"""Property-based checks of the invariants each module promises."""

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from casi.baselines import davies_bouldin, silhouette_condensed, silhouette_full
from casi.dataset import process_in_batches, sample_rows, standardize
from casi.estimators import (
    compute_coi,
    compute_gap_statistics,
    estimate_ccr_coi,
    fuse_estimates,
)
from casi.kmeans import KMeansConfig, fit_kmeans
from casi.numerics import (
    kde_profile,
    laplacian,
    pca_project_1d,
    similarity_matrix,
    symmetric_eigenvalues,
)

import oracles

PROFILE = settings(max_examples=40, deadline=None)
coords = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@st.composite
def matrices(draw, min_rows=2, max_rows=25, max_cols=4):
    n = draw(st.integers(min_rows, max_rows))
    d = draw(st.integers(1, max_cols))
    return draw(arrays(np.float64, (n, d), elements=coords))


@st.composite
def distinct_rows(draw, min_rows=4, max_rows=25, max_cols=3):
    # rounding keeps squared distances clear of underflow
    X = np.round(draw(matrices(min_rows, max_rows, max_cols)), 6)
    assume(np.unique(X, axis=0).shape[0] >= min_rows)
    return X


@PROFILE
@given(matrices())
def test_standardize_moments(X):
    Z, params = standardize(X)
    for j in range(X.shape[1]):
        if params.stddevs[j] == 0:
            assert not Z[:, j].any()
        elif params.stddevs[j] > 1e-6 * max(1.0, abs(params.means[j])):
            assert abs(Z[:, j].mean()) < 1e-9
            assert abs(Z[:, j].std() - 1.0) < 1e-9


@PROFILE
@given(st.integers(1, 60), st.data())
def test_batch_mean_of_row_counts(n, data):
    b = data.draw(st.integers(1, n))
    got = process_in_batches(np.zeros((n, 1)), lambda x: x.shape[0], b)
    assert abs(got - n / math.ceil(n / b)) < 1e-12


@PROFILE
@given(matrices(), st.data(), st.integers(0, 2**31))
def test_sample_rows_are_rows(X, data, seed):
    m = data.draw(st.integers(1, X.shape[0]))
    S = sample_rows(X, m, seed)
    rows = {tuple(r) for r in X}
    assert S.shape == (m, X.shape[1])
    assert all(tuple(r) in rows for r in S)


@PROFILE
@given(distinct_rows(min_rows=2))
def test_similarity_and_laplacian(X):
    sim = similarity_matrix(X)
    S = sim.S
    assert np.array_equal(S, S.T)
    assert np.all(np.diag(S) == 1.0)
    assert np.all(S <= 1.0) and np.all(S >= 0.0)
    L = laplacian(sim)
    assert np.abs(L.sum(axis=1)).max() < 1e-9
    assert symmetric_eigenvalues(L).eigenvalues[0] >= -1e-8


@PROFILE
@given(st.integers(2, 12), st.integers(0, 2**31))
def test_eigen_trace_and_order(n, seed):
    A = np.random.default_rng(seed).normal(size=(n, n))
    M = A + A.T
    spec = symmetric_eigenvalues(M, "jacobi")
    w = spec.eigenvalues
    assert np.all(spec.gaps >= -1e-9)
    assert len(spec.gaps) == n - 1
    tr = float(np.trace(M))
    assert abs(w.sum() - tr) <= 1e-6 * max(1.0, abs(tr))


@PROFILE
@given(distinct_rows(min_rows=3), st.integers(0, 2**31))
def test_pca_permutation(X, seed):
    perm = np.random.default_rng(seed).permutation(X.shape[0])
    a = pca_project_1d(X)[perm]
    b = pca_project_1d(X[perm])
    scale = max(1.0, float(np.abs(a).max()))
    assert np.allclose(a, b, atol=1e-7 * scale) or np.allclose(a, -b, atol=1e-7 * scale)


@PROFILE
@given(arrays(np.float64, st.integers(1, 80), elements=coords), st.one_of(st.just("silverman"), st.floats(0.05, 20)))
def test_kde_density(values, h):
    prof = kde_profile(values, h=h)
    assert np.all(prof.density >= 0)
    assert 0.98 <= prof.integral() <= 1.02
    assert prof.peak_count == len(prof.valley_indices) + 1
    for i in prof.valley_indices:
        assert prof.smoothed[i - 1] >= prof.smoothed[i] <= prof.smoothed[i + 1]


@PROFILE
@given(distinct_rows(), st.integers(1, 4), st.integers(0, 1000))
def test_kmeans_invariants(X, k, seed):
    k = min(k, X.shape[0])
    trace = []
    cfg = KMeansConfig(n_init=2, seed=seed)
    res = fit_kmeans(X, k, cfg, callback=lambda it, w: trace.append((it, w)))
    assert res.labels.min() >= 0 and res.labels.max() < k
    assert res.dispersion >= 0
    assert (res.cluster_sizes() > 0).all()
    # monotone within each restart (iteration counter resets at 1)
    for (i0, w0), (i1, w1) in zip(trace, trace[1:]):
        if i1 > i0:
            assert w1 <= w0 + 1e-9 * max(1.0, w0)
    again = fit_kmeans(X, k, cfg)
    assert np.array_equal(res.labels, again.labels)
    single = min(fit_kmeans(X, k, KMeansConfig(n_init=1, seed=seed + r)).dispersion for r in range(2))
    assert res.dispersion <= single
    assert compute_coi(X, res, variant="misclassified_fraction") == 0.0


@PROFILE
@given(distinct_rows(min_rows=4, max_rows=20), st.integers(2, 4), st.integers(0, 100))
def test_silhouettes_bounded_and_exact(X, k, seed):
    k = min(k, X.shape[0] - 1)
    res = fit_kmeans(X, k, KMeansConfig(n_init=1, seed=seed))
    full = silhouette_full(X, res)
    assert -1.0 <= full <= 1.0
    assert -1.0 <= silhouette_condensed(X, res) <= 1.0
    assert abs(full - oracles.silhouette(X, res.labels)) < 1e-9


@PROFILE
@given(distinct_rows(min_rows=6), st.floats(-100, 100), st.floats(0.1, 10), st.integers(0, 100))
def test_dbi_similarity_invariance(X, shift, scale, seed):
    res = fit_kmeans(X, 2, KMeansConfig(n_init=1, seed=seed))
    base = davies_bouldin(X, res)
    for Y, C in ((X + shift, res.centroids + shift), (X * scale, res.centroids * scale)):
        moved = type(res)(2, res.labels, C, 0.0, 1)
        assert abs(davies_bouldin(Y, moved) - base) < 1e-9 * max(1.0, base)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=4, max_size=4),
       st.lists(st.floats(0, 10), min_size=4, max_size=4).filter(lambda w: sum(w) > 1e-3),
       st.floats(1e-3, 1e3))
def test_fusion_bounds_and_scaling(ks, weights, c):
    k = fuse_estimates(ks, weights)
    assert min(ks) <= k <= max(ks)
    assert fuse_estimates(ks, [c * w for w in weights]) == k


@pytest.mark.filterwarnings("ignore:zero-width bounding box")
@settings(max_examples=10, deadline=None)
@given(distinct_rows(min_rows=8, max_rows=30), st.integers(0, 100))
def test_gap_identity(X, seed):
    rep = compute_gap_statistics(X, range(1, 4), B=3, cfg=KMeansConfig(n_init=1), seed=seed)
    assert np.all(rep.s_k >= 0)
    assert np.all(np.abs(rep.gap - (rep.expected_log_wk_star - rep.log_wk)) <= 1e-12)


@settings(max_examples=15, deadline=None)
@given(distinct_rows(min_rows=8, max_rows=30), st.sampled_from(["scale", "minmax", "none"]))
def test_ccr_coi_argmin(X, normalize):
    est = estimate_ccr_coi(X, range(2, 5), KMeansConfig(n_init=1), normalize=normalize)
    rows = est.diagnostics["scores"]
    assert est.k == min(rows, key=lambda r: (r.combined, r.k)).k
