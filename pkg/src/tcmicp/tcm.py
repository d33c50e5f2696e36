"""Transformation compatibility measure, Hausdorff metric and reference selection.

All distances in this module are *squared* Euclidean norms except
:func:`correspondence`, which is a mean of plain distances.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .geometry import GeometryError, PointCloud, closest_pair_sq
from .kdtree import KdTree

DEFAULT_MAX_CORR_POINTS = 2000


@dataclass(frozen=True)
class TcmBreakdown:
    f: float
    g_raw: float
    g: float
    h: float
    tau: float


def _min_sq_to(points: NDArray[np.float64], c: NDArray[np.float64]) -> float:
    d = points - c
    return float((d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]).min())


def inter_cluster_terms(a: PointCloud, b: PointCloud) -> tuple[float, float]:
    """``(X, Y)``: min squared distance from a's points to b's centroid, and vice versa."""
    return _min_sq_to(a.points, b.centroid), _min_sq_to(b.points, a.centroid)


def inter_cluster_f(a: PointCloud, b: PointCloud) -> float:
    x, y = inter_cluster_terms(a, b)
    return x + y


def intra_cluster_g(
    a: PointCloud, b: PointCloud, *, spacing_a: float | None = None, spacing_b: float | None = None
) -> tuple[float, float]:
    """Signed and absolute difference of the two clouds' closest-pair squared distances.

    Precomputed closest-pair values may be passed to skip the KD-tree pass.
    """
    if len(a) < 2 or len(b) < 2:
        raise GeometryError("intra-cluster spacing needs clouds with at least two points")
    m = closest_pair_sq(a) if spacing_a is None else spacing_a
    n = closest_pair_sq(b) if spacing_b is None else spacing_b
    g_raw = m - n
    return g_raw, abs(g_raw)


def tau(
    a: PointCloud, b: PointCloud, *, spacing_a: float | None = None, spacing_b: float | None = None
) -> TcmBreakdown:
    f = inter_cluster_f(a, b)
    g_raw, g = intra_cluster_g(a, b, spacing_a=spacing_a, spacing_b=spacing_b)
    h = 1.0 / (len(a) * len(b))
    return TcmBreakdown(f=f, g_raw=g_raw, g=g, h=h, tau=f * g * h)


def directed_hausdorff_sq(a: PointCloud, b: PointCloud, tree_b: KdTree | None = None) -> float:
    _, d2 = (tree_b or KdTree(b)).query(a.points)
    return float(d2.max())


def hausdorff_sq(a: PointCloud, b: PointCloud) -> float:
    """Symmetric Hausdorff distance with a squared inner norm."""
    return max(directed_hausdorff_sq(a, b), directed_hausdorff_sq(b, a))


def _subsample(cloud: PointCloud, cap: int, seed: int) -> NDArray[np.float64]:
    n = len(cloud)
    if n <= cap:
        return cloud.points
    # depends only on (seed, n) so that argument order never changes the sample
    rng = np.random.default_rng([seed, n])
    return cloud.points[np.sort(rng.choice(n, size=cap, replace=False))]


def correspondence(
    a: PointCloud, b: PointCloud, max_points: int = DEFAULT_MAX_CORR_POINTS, seed: int = 0
) -> float:
    """Symmetric mean nearest-neighbour distance between two clouds."""
    pa, pb = _subsample(a, max_points, seed), _subsample(b, max_points, seed)
    _, dab = KdTree(pb).query(pa)
    _, dba = KdTree(pa).query(pb)
    return 0.5 * (float(np.sqrt(dab).mean()) + float(np.sqrt(dba).mean()))


@dataclass(frozen=True)
class CorrespondenceGraph:
    n: int
    edges: tuple[tuple[int, int], ...]
    threshold: float

    def degrees(self) -> NDArray[np.int64]:
        deg = np.zeros(self.n, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self, i: int) -> list[int]:
        return sorted({j for e in self.edges for j in e if i in e and j != i})


def default_threshold(clouds: Sequence[PointCloud]) -> float:
    """Half the mean bounding-box diagonal of the clouds."""
    return 0.5 * float(np.mean([c.aabb().diagonal for c in clouds]))


def build_graph(
    clouds: Sequence[PointCloud],
    threshold: float,
    max_points: int = DEFAULT_MAX_CORR_POINTS,
    seed: int = 0,
) -> CorrespondenceGraph:
    edges = []
    for i in range(len(clouds)):
        for j in range(i + 1, len(clouds)):
            if correspondence(clouds[i], clouds[j], max_points, seed) < threshold:
                edges.append((i, j))
    return CorrespondenceGraph(len(clouds), tuple(edges), float(threshold))


def select_reference(graph: CorrespondenceGraph, clouds: Sequence[PointCloud] | None = None) -> int:
    """Max-degree node; ties go to the node nearest the middle of the list, then the lower index."""
    if graph.n < 1:
        raise ValueError("empty graph")
    deg = graph.degrees()
    middle = (graph.n - 1) / 2
    return min(range(graph.n), key=lambda i: (-deg[i], abs(i - middle), i))


def select_candidate(
    candidates: Sequence[PointCloud],
    merged: PointCloud,
    *,
    merged_spacing: float | None = None,
    candidate_spacings: Sequence[float] | None = None,
    max_points: int = DEFAULT_MAX_CORR_POINTS,
    seed: int = 0,
) -> tuple[int, list[TcmBreakdown]]:
    """Index of the candidate with the lowest tau against ``merged``.

    Ties on tau fall back to the smaller ``f * h``, then the smaller
    correspondence value.
    """
    if not candidates:
        raise ValueError("no candidates")
    if merged_spacing is None:
        merged_spacing = closest_pair_sq(merged)
    scores = [
        tau(c, merged, spacing_a=None if candidate_spacings is None else candidate_spacings[i],
            spacing_b=merged_spacing)
        for i, c in enumerate(candidates)
    ]
    best_tau = min(s.tau for s in scores)
    tied = [i for i, s in enumerate(scores) if s.tau == best_tau]
    if len(tied) > 1:
        best_fh = min(scores[i].f * scores[i].h for i in tied)
        tied = [i for i in tied if scores[i].f * scores[i].h == best_fh]
    if len(tied) > 1:
        tied.sort(key=lambda i: (correspondence(candidates[i], merged, max_points, seed), i))
    return tied[0], scores
