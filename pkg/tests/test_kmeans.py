import numpy as np
import pytest
from sklearn.base import clone

from casi.kmeans import (
    ClusteringResult,
    KMeans,
    KMeansConfig,
    center_sq_distances,
    dispersion,
    fit_kmeans,
)
from casi.numerics import count_distances

import oracles

FOUR = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])


def test_k_one_is_column_mean(rng):
    X = rng.normal(size=(25, 3))
    res = fit_kmeans(X, 1)
    np.testing.assert_allclose(res.centroids[0], X.mean(axis=0))
    assert res.dispersion == pytest.approx(((X - X.mean(axis=0)) ** 2).sum())


def test_k_equals_n(rng):
    X = rng.normal(size=(6, 2))
    res = fit_kmeans(X, 6)
    assert res.dispersion == 0.0
    assert sorted(res.cluster_sizes().tolist()) == [1] * 6


def test_four_point_groups():
    res = fit_kmeans(FOUR, 2)
    cents = sorted(map(tuple, res.centroids))
    assert cents == [(0.0, 0.5), (10.0, 0.5)]
    assert res.dispersion == 1.0
    best_w, _ = oracles.best_two_partition(FOUR)
    assert res.dispersion == best_w == 1.0


def test_centroids_are_member_means(blobs3):
    X, _ = blobs3
    res = fit_kmeans(X, 3)
    np.testing.assert_allclose(res.centroids, oracles.means_by_label(X, res.labels, 3), atol=1e-6)


@pytest.mark.parametrize("k", [0, 5])
def test_bad_k(k):
    with pytest.raises(ValueError):
        fit_kmeans(FOUR, k)


def test_dispersion_hand_value():
    res = ClusteringResult(1, np.array([0, 0]), np.array([[1.0]]), 0.0, 1)
    assert dispersion([[0.0], [2.0]], res) == 2.0


def test_dispersion_zero():
    res = ClusteringResult(2, np.array([0, 1]), np.array([[1.0], [3.0]]), 0.0, 1)
    assert dispersion([[1.0], [3.0]], res) == 0.0


def test_dispersion_against_loop(rng):
    X = rng.normal(size=(30, 2))
    res = fit_kmeans(X, 3)
    assert abs(dispersion(X, res) - oracles.dispersion(X, res.labels, oracles.rows(res.centroids))) < 1e-9


def test_dispersion_mismatch():
    res = ClusteringResult(1, np.array([0]), np.array([[0.0, 0.0]]), 0.0, 1)
    with pytest.raises(ValueError, match="dimension"):
        dispersion([[1.0, 2.0, 3.0]], res)


def test_monotone_iterations(rng):
    X = rng.normal(size=(200, 2))
    trace = []
    fit_kmeans(X, 6, KMeansConfig(n_init=1, init="random"), callback=lambda it, w: trace.append(w))
    assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))


def test_reproducible(blobs3):
    X, _ = blobs3
    a = fit_kmeans(X, 4, KMeansConfig(seed=9))
    b = fit_kmeans(X, 4, KMeansConfig(seed=9))
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.centroids, b.centroids)


def test_best_of_restarts(rng):
    X = rng.normal(size=(120, 2))
    best = fit_kmeans(X, 5, KMeansConfig(n_init=4, seed=3))
    singles = [fit_kmeans(X, 5, KMeansConfig(n_init=1, seed=3 + r)).dispersion for r in range(4)]
    assert best.dispersion == min(singles)


def test_no_empty_clusters_with_duplicates():
    X = np.array([[0.0]] * 8 + [[1.0], [2.0]])
    res = fit_kmeans(X, 3, KMeansConfig(init="random", n_init=3))
    assert (res.cluster_sizes() > 0).all()


def test_config_validation():
    for bad in ({"n_init": 0}, {"max_iter": 0}, {"tol": -1.0}, {"init": "farthest"}):
        with pytest.raises(ValueError):
            KMeansConfig(**bad)


def test_center_distances_and_count(rng):
    X, C = rng.normal(size=(7, 3)), rng.normal(size=(4, 3))
    with count_distances() as c:
        D = center_sq_distances(X, C)
    assert c.by_source == {"kmeans": 28}
    expect = [[oracles.sq_dist(x, m) for m in oracles.rows(C)] for x in oracles.rows(X)]
    np.testing.assert_allclose(D, expect, atol=1e-9)


def test_estimator_api(blobs3):
    X, y = blobs3
    km = KMeans(n_clusters=3, random_state=1).fit(X)
    assert km.labels_.shape == (X.shape[0],)
    assert km.n_features_in_ == 2
    assert np.array_equal(km.predict(X), km.labels_)
    assert km.transform(X).shape == (X.shape[0], 3)
    assert km.get_params()["n_clusters"] == 3
    assert clone(km).get_params() == km.get_params()
    # each true blob maps to one cluster
    for c in range(3):
        assert len(set(km.labels_[y == c])) == 1


def test_estimator_unfitted():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        KMeans(2).predict(FOUR)


def test_result_dict():
    d = fit_kmeans(FOUR, 2).to_dict()
    assert set(d) == {"k", "assignments", "centroids", "dispersion", "iterations_run"}
