import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_cloud
from tcmicp.geometry import PointCloud
from tcmicp.preprocess import (
    Clustering,
    PreprocessConfig,
    SeedRadiusWarning,
    kmeans,
    preprocess,
    remove_outliers,
    seed_centroids,
)


def blobs(n=200, sigma=0.1, centers=((0, 0, 0), (10, 0, 0)), seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(np.vstack([rng.normal(c, sigma, (n, 3)) for c in centers]))


def test_config_validation():
    for bad in [dict(k=0), dict(seed_radius=0.0), dict(outlier_factor=-1.0), dict(max_kmeans_iters=0)]:
        with pytest.raises(ValueError):
            PreprocessConfig(**bad)


def test_default_radius_tracks_scene_size():
    c = PointCloud([[0, 0, 0], [3, 4, 12]])
    assert PreprocessConfig(k=4).radius_for(c) == pytest.approx(13 / 8)


def test_single_seed_is_a_cloud_point():
    c = random_cloud(50)
    s = seed_centroids(c, PreprocessConfig(k=1))
    assert s.shape == (1, 3)
    assert any(np.array_equal(s[0], p) for p in c.points)


def test_one_seed_per_blob():
    c = PointCloud(np.vstack([np.random.default_rng(1).normal(0, 1, (100, 3)),
                              np.random.default_rng(2).normal(0, 1, (100, 3)) + [100, 0, 0]]))
    for seed in range(20):
        s = seed_centroids(c, PreprocessConfig(k=2, seed_radius=10.0, rng_seed=seed))
        assert sorted(s[:, 0] > 50) == [False, True]


def test_too_many_seeds():
    with pytest.raises(ValueError):
        seed_centroids(random_cloud(4), PreprocessConfig(k=5))


def test_seed_radius_shrinks_with_warning():
    c = random_cloud(30)
    with pytest.warns(SeedRadiusWarning):
        s = seed_centroids(c, PreprocessConfig(k=10, seed_radius=100.0))
    assert len(np.unique(s, axis=0)) == 10


def test_seeds_spread_when_possible():
    c = random_cloud(500, seed=3)
    r = 0.3
    with warnings.catch_warnings():
        warnings.simplefilter("error", SeedRadiusWarning)
        s = seed_centroids(c, PreprocessConfig(k=6, seed_radius=r, rng_seed=4))
    d = np.linalg.norm(s[:, None] - s[None], axis=-1)
    assert d[np.triu_indices(6, 1)].min() > r


def test_kmeans_at_seeds_converges_at_once():
    pts = np.array([[0, 0, 0], [5, 0, 0], [0, 5, 0.0]])
    cl = kmeans(PointCloud(pts), pts, PreprocessConfig(k=3))
    assert cl.iterations == 1
    assert cl.assignment.tolist() == [0, 1, 2]


def test_kmeans_two_blobs():
    c = blobs()
    cl = kmeans(c, np.array([[1.0, 0, 0], [8.0, 0, 0]]), PreprocessConfig(k=2))
    np.testing.assert_allclose(cl.centroids[0], c.points[:200].mean(0), atol=0.2)
    np.testing.assert_allclose(cl.centroids[1], c.points[200:].mean(0), atol=0.2)


def test_kmeans_single_cluster_is_mean():
    c = random_cloud(100, seed=9)
    cl = kmeans(c, c.points[:1], PreprocessConfig(k=1))
    np.testing.assert_allclose(cl.centroids[0], c.points.mean(0), atol=1e-12)


def test_kmeans_empty_cluster_keeps_centroid():
    c = PointCloud([[0, 0, 0], [0.1, 0, 0]])
    far = [100.0, 100.0, 100.0]
    cl = kmeans(c, np.array([[0.0, 0, 0], far]), PreprocessConfig(k=2))
    np.testing.assert_array_equal(cl.centroids[1], far)


def test_assignment_ties_go_to_lowest():
    c = PointCloud([[0.0, 0, 0]])
    cl = kmeans(c, np.array([[1.0, 0, 0], [-1.0, 0, 0]]), PreprocessConfig(k=2, max_kmeans_iters=1))
    assert cl.assignment[0] == 0


def test_far_point_removed():
    rng = np.random.default_rng(0)
    blob = rng.uniform(-1, 1, (300, 3))
    pts = np.vstack([blob, [[100.0, 0, 0]]])
    c = PointCloud(pts)
    cfg = PreprocessConfig(k=1)
    out, removed = remove_outliers(c, kmeans(c, pts[:1], cfg), cfg)
    assert removed == 1
    np.testing.assert_array_equal(out.points, blob)  # order of survivors kept


def test_huge_factor_removes_nothing():
    c = random_cloud(200)
    cfg = PreprocessConfig(k=3, outlier_factor=1e9)
    _, removed = preprocess(c, cfg)
    assert removed == 0


def test_identical_points():
    c = PointCloud([[1, 1, 1], [1, 1, 1]])
    out, removed = preprocess(c, PreprocessConfig(k=2))
    assert removed == 0 and len(out) == 2


def test_never_removes_everything():
    c = PointCloud([[0, 0, 0], [1, 0, 0]])
    cl = Clustering(np.array([[0.5, 0, 0]]), np.zeros(2, dtype=np.int64))
    out, removed = remove_outliers(c, cl, PreprocessConfig(k=1, outlier_factor=1e-9))
    assert len(out) >= 1


def test_k_capped_at_cloud_size():
    out, _ = preprocess(random_cloud(3), PreprocessConfig(k=8))
    assert len(out) >= 1


def test_deterministic():
    c = random_cloud(400, seed=2)
    a = preprocess(c, PreprocessConfig(rng_seed=5))
    b = preprocess(c, PreprocessConfig(rng_seed=5))
    assert a[1] == b[1] and a[0] == b[0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_idempotence(seed, k):
    rng = np.random.default_rng(seed)
    pts = np.vstack([rng.normal(0, 1, (150, 3)), rng.uniform(-30, 30, (6, 3))])
    cfg = PreprocessConfig(k=k, rng_seed=seed)
    once, r1 = preprocess(PointCloud(pts), cfg)
    _, r2 = preprocess(once, cfg)
    assert r2 <= r1


def test_clean_blob_second_pass_removes_nothing():
    rng = np.random.default_rng(1)
    pts = np.vstack([rng.uniform(-1, 1, (300, 3)), [[50.0, 50, 50]]])
    cfg = PreprocessConfig(k=1)
    once, r1 = preprocess(PointCloud(pts), cfg)
    _, r2 = preprocess(once, cfg)
    assert r1 == 1 and r2 == 0
