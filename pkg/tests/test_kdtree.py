import numpy as np
import pytest

from ebmsurf.geometry import GeometryError
from ebmsurf.kdtree import SpatialIndex, _knn_numpy, _nn_numpy, nearest


def brute_nearest(points, q):
    d2 = ((points - q) ** 2).sum(axis=1)
    i = int(np.argmin(d2))  # argmin picks the lowest id on ties
    return i, float(np.sqrt(d2[i]))


def test_nearest_simple():
    index = SpatialIndex(np.array([[0, 0, 0], [1, 0, 0]], dtype=float))
    pid, dist = nearest(index, np.array([0.4, 0.0, 0.0]))
    assert pid == 0
    assert dist == pytest.approx(0.4)


def test_nearest_exact_point():
    pts = np.random.default_rng(0).normal(size=(50, 3))
    index = SpatialIndex(pts)
    pid, dist = index.nearest(pts[17])
    assert pid == 17
    assert dist == 0.0


def test_nearest_matches_brute_force(rng):
    for trial in range(5):
        pts = rng.normal(size=(1000, 3))
        queries = rng.normal(size=(100, 3))
        index = SpatialIndex(pts)
        ids, dists = index.nearest_many(queries)
        for q, i, d in zip(queries, ids, dists):
            bi, bd = brute_nearest(pts, q)
            assert i == bi
            assert d == pytest.approx(bd, abs=1e-12)


def test_tie_breaks_to_lowest_id():
    pts = np.array([[1.0, 0, 0], [0, 0, 0], [1.0, 0, 0], [0, 1.0, 0]])
    index = SpatialIndex(pts)
    pid, dist = index.nearest(np.array([1.0, 0.0, 0.0]))
    assert pid == 0 and dist == 0.0
    # equidistant distinct points: ids 0 and 3 are both at distance sqrt(0.5)
    pid, _ = index.nearest(np.array([0.5, 0.5, 0.0]))
    assert pid == 0


def test_knn_matches_brute_force(rng):
    pts = rng.normal(size=(500, 3))
    queries = rng.normal(size=(40, 3))
    index = SpatialIndex(pts)
    ids, dists = index.knn_many(queries, 7)
    for qi, q in enumerate(queries):
        d2 = ((pts - q) ** 2).sum(axis=1)
        ref = np.argsort(d2, kind="stable")[:7]
        assert np.array_equal(ids[qi], ref)
        assert np.allclose(dists[qi], np.sqrt(d2[ref]))


def test_numpy_fallback_equals_tree(rng):
    pts = rng.normal(size=(300, 3))
    queries = rng.normal(size=(60, 3))
    index = SpatialIndex(pts)
    tree_ids, tree_d = index.nearest_many(queries)
    np_ids, np_d2 = _nn_numpy(pts, queries)
    assert np.array_equal(tree_ids, np_ids)
    assert np.allclose(tree_d, np.sqrt(np_d2))
    k_ids, k_d = index.knn_many(queries, 5)
    f_ids, f_d2 = _knn_numpy(pts, queries, 5)
    assert np.array_equal(k_ids, f_ids)
    assert np.allclose(k_d, np.sqrt(f_d2))


def test_random_property_up_to_1e4_points():
    rng = np.random.default_rng(99)
    pts = rng.uniform(-1, 1, size=(10_000, 3))
    queries = rng.uniform(-1.2, 1.2, size=(200, 3))
    index = SpatialIndex(pts)
    ids, dists = index.nearest_many(queries)
    d2 = ((queries[:, None, :] - pts[None]) ** 2).sum(axis=2)
    ref = np.argmin(d2, axis=1)
    assert np.array_equal(ids, ref)


def test_empty_index_errors():
    with pytest.raises(GeometryError):
        SpatialIndex(np.zeros((0, 3)))


def test_single_point_tree():
    index = SpatialIndex(np.array([[1.0, 2.0, 3.0]]))
    pid, dist = index.nearest(np.array([1.0, 2.0, 4.0]))
    assert pid == 0 and dist == pytest.approx(1.0)


def test_duplicate_points_knn():
    pts = np.zeros((20, 3))
    index = SpatialIndex(pts)
    ids, dists = index.knn_many(np.zeros((1, 3)), 5)
    assert np.array_equal(ids[0], np.arange(5))  # lowest ids first on full ties
    assert np.all(dists == 0.0)
