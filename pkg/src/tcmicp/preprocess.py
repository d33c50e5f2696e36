"""Outlier removal: well-separated seeding, K-means, per-cluster distance cut."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from .geometry import PointCloud
from .kdtree import KdTree


class SeedRadiusWarning(UserWarning):
    """The seeding pool ran dry and the exclusion radius had to be shrunk."""


@dataclass(frozen=True)
class PreprocessConfig:
    k: int = 8
    seed_radius: float | None = None  # None: scene diagonal / (2k)
    outlier_factor: float = 3.0
    max_kmeans_iters: int = 50
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.seed_radius is not None and not self.seed_radius > 0:
            raise ValueError("seed_radius must be > 0")
        if not self.outlier_factor > 0:
            raise ValueError("outlier_factor must be > 0")
        if self.max_kmeans_iters < 1:
            raise ValueError("max_kmeans_iters must be >= 1")

    def radius_for(self, cloud: PointCloud) -> float:
        if self.seed_radius is not None:
            return self.seed_radius
        diag = cloud.aabb().diagonal
        return diag / (2 * self.k) if diag > 0 else 1.0


@dataclass(frozen=True)
class Clustering:
    centroids: NDArray[np.float64]
    assignment: NDArray[np.int64]
    iterations: int = 0


def seed_centroids(cloud: PointCloud, cfg: PreprocessConfig) -> NDArray[np.float64]:
    """Pick ``cfg.k`` seeds from the cloud, each outside radius r of the earlier ones.

    When every remaining point is within r of some seed, r is halved (a
    :class:`SeedRadiusWarning` is issued) and the pool is rebuilt.
    """
    n = len(cloud)
    if cfg.k > n:
        raise ValueError(f"k={cfg.k} exceeds cloud size {n}")
    rng = np.random.default_rng(cfg.rng_seed)
    tree = KdTree(cloud)
    r = cfg.radius_for(cloud)
    available = np.ones(n, dtype=bool)
    chosen: list[int] = []
    halvings = 0
    while len(chosen) < cfg.k:
        pool = np.flatnonzero(available)
        if pool.size == 0:
            halvings += 1
            r *= 0.5
            available[:] = True
            available[chosen] = False
            if halvings <= 64:
                for s in chosen:
                    available[tree.query_radius(cloud.points[s], r)] = False
            pool = np.flatnonzero(available)
            if pool.size == 0:
                # only coincident points left; fall back to unused indices
                continue
        pick = int(pool[rng.integers(pool.size)])
        chosen.append(pick)
        available[tree.query_radius(cloud.points[pick], r)] = False
        available[pick] = False
    if halvings:
        warnings.warn(
            f"seed radius shrunk to {r:.6g} to place {cfg.k} seeds", SeedRadiusWarning, stacklevel=2
        )
    return cloud.points[chosen].copy()


def _assign(points: NDArray[np.float64], centroids: NDArray[np.float64]) -> NDArray[np.int64]:
    diff = points[:, None, :] - centroids[None, :, :]
    d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
    return np.argmin(d2, axis=1).astype(np.int64)  # first minimum -> lowest index


def kmeans(cloud: PointCloud, seeds: NDArray[np.float64], cfg: PreprocessConfig) -> Clustering:
    """Lloyd iterations from the given seeds; empty clusters keep their centroid."""
    centroids = np.array(seeds, dtype=np.float64).reshape(-1, 3)
    if centroids.shape[0] == 0:
        raise ValueError("need at least one seed")
    pts = cloud.points
    k = centroids.shape[0]
    prev = None
    it = 0
    while True:
        assign = _assign(pts, centroids)
        if prev is not None and np.array_equal(assign, prev):
            break
        if it >= cfg.max_kmeans_iters:
            break
        counts = np.bincount(assign, minlength=k)
        for c in range(k):
            if counts[c]:
                centroids[c] = pts[assign == c].mean(axis=0)
        prev = assign
        it += 1
    return Clustering(centroids, assign, it)


def remove_outliers(
    cloud: PointCloud, clustering: Clustering, cfg: PreprocessConfig
) -> tuple[PointCloud, int]:
    """Drop points farther than ``outlier_factor`` x the cluster's median centroid distance."""
    dist = np.linalg.norm(cloud.points - clustering.centroids[clustering.assignment], axis=1)
    keep = np.ones(len(cloud), dtype=bool)
    for c in np.unique(clustering.assignment):
        members = clustering.assignment == c
        limit = cfg.outlier_factor * np.median(dist[members])
        keep[members] = dist[members] <= limit
    if not keep.any():
        keep[int(np.argmin(dist))] = True
    removed = int(len(cloud) - keep.sum())
    if removed == 0:
        return cloud, 0
    return cloud.subset(np.flatnonzero(keep)), removed


def preprocess(cloud: PointCloud, cfg: PreprocessConfig) -> tuple[PointCloud, int]:
    """Seed, cluster and filter one cloud. ``k`` is capped at the cloud size."""
    if cfg.k > len(cloud):
        cfg = replace(cfg, k=len(cloud))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SeedRadiusWarning)
        seeds = seed_centroids(cloud, cfg)
    return remove_outliers(cloud, kmeans(cloud, seeds, cfg), cfg)
