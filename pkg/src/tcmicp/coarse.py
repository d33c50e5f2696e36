"""Global initial alignment for pairs that start outside the local basin.

The local aligners (iterated L1 fits, ICP) only converge from a few degrees
and a fraction of a metre away. This module proposes starting poses:

1. Rotation from surface orientation alone. Per-voxel PCA normals of both
   clouds are compared with an axial von Mises kernel; the rotation that best
   overlays the two orientation distributions is found by a grid search over
   the allowed angle ball followed by compass refinement. Translation does not
   enter, so partial overlap barely matters.
2. Translation by FFT cross-correlation of voxel grids, with the rotation
   fixed. Voxels are weighted by the inverse square root of how common their
   normal direction is, so a dominant plane (ground) cannot outvote the rest.
   The strongest peaks inside the allowed shift range become candidates.

``best_start`` runs a local aligner from every candidate (plus the identity)
and keeps the result that brings the most source points within half the
target point spacing.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable
from dataclasses import dataclass
from typing import TypeVar

import numpy as np
from numpy.typing import NDArray

from .geometry import PointCloud, RigidTransform
from .kdtree import KdTree
from .lp import rotations_from_vectors

T = TypeVar("T")

MAX_NORMALS = 300
NORMAL_MIN_POINTS = 5
PLANARITY = 0.05  # smallest eigenvalue share below which a voxel counts as planar
GRID_STEP_DEG = 2.5
COARSE_KERNEL_DEG = 6.0
FINE_KERNEL_DEG = 3.0
REFINE_STARTS = 5
MIN_STEP_DEG = 0.05
NORMAL_SCALES = (0.8, 1.0, 1.25)  # voxel size multipliers pooled for the rotation search
MERGE_DEG = 1.5
SPREAD = 1e-9  # second eigenvalue share below which a voxel's points lie on a line
BALANCE_POWER = 0.5


def _voxel_stats(points: NDArray[np.float64], voxel: float):
    key = np.floor((points - points.min(axis=0)) / voxel).astype(np.int64)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    m = counts.size
    mean = np.stack([np.bincount(inv, points[:, a], m) for a in range(3)], axis=1) / counts[:, None]
    d = points - mean[inv]
    cov = np.empty((m, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            cov[:, a, b] = cov[:, b, a] = np.bincount(inv, d[:, a] * d[:, b], m) / counts
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]
    total = np.maximum(evals.sum(axis=1), 1e-300)
    # flat but not collinear: a voxel holding two distinct points, each repeated
    # (overlapping scans in a merged cloud), would otherwise get an arbitrary normal
    planar = (evals[:, 0] <= PLANARITY * total) & (evals[:, 1] >= SPREAD * total)
    return mean, counts, normals, planar


def voxel_normals(points: NDArray[np.float64], voxel: float):
    """Unit normals of planar voxels holding enough points, with point counts as weights."""
    _, counts, normals, planar = _voxel_stats(points, voxel)
    keep = planar & (counts >= NORMAL_MIN_POINTS)
    return normals[keep], counts[keep].astype(np.float64)


def merge_normals(normals: NDArray[np.float64], weights: NDArray[np.float64], width: float):
    """Sum the weights of axial normals that fall into the same ``width``-radian cell."""
    n = normals * np.where(normals[:, 2:3] < 0, -1.0, 1.0)
    key = np.round(n / width).astype(np.int64)
    _, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    m = inv.max() + 1
    total = np.stack([np.bincount(inv, n[:, a] * weights, m) for a in range(3)], axis=1)
    return total / np.linalg.norm(total, axis=1, keepdims=True), np.bincount(inv, weights, m)


def pooled_normals(points: NDArray[np.float64], voxel: float):
    parts = [voxel_normals(points, voxel * f) for f in NORMAL_SCALES]
    n = np.concatenate([p[0] for p in parts])
    w = np.concatenate([p[1] for p in parts])
    if not len(n):
        return n, w
    return merge_normals(n, w, np.radians(MERGE_DEG))


def balanced_voxels(points: NDArray[np.float64], voxel: float):
    """Voxel centroids weighted by ``1/sqrt(size of their orientation bucket)``.

    Planar voxels are bucketed by normal direction (30 degree azimuth and 15
    degree elevation bins, sign folded to the upper hemisphere); non-planar
    voxels share one bucket.
    """
    mean, counts, n, planar = _voxel_stats(points, voxel)
    planar &= counts >= 3
    n = n * np.where(n[:, 2:3] < 0, -1.0, 1.0)
    az = np.floor((np.arctan2(n[:, 1], n[:, 0]) + np.pi) / (np.pi / 6)).astype(np.int64)
    el = np.floor(np.arccos(np.clip(n[:, 2], -1.0, 1.0)) / (np.pi / 12)).astype(np.int64)
    bucket = np.where(planar, el * 100 + az, -1)
    _, inv, size = np.unique(bucket, return_inverse=True, return_counts=True)
    return mean, size[inv.ravel()] ** -BALANCE_POWER


def _kappa(width_deg: float) -> float:
    return 1.0 / (1.0 - np.cos(np.radians(width_deg)))


def orientation_score(rotations, ns, ws, nt, wt, kappa: float) -> NDArray[np.float64]:
    """``sum_ij ws_i wt_j exp(kappa (|nt_j . R ns_i| - 1))`` for each rotation ``R``."""
    out = np.empty(len(rotations))
    for k0 in range(0, len(rotations), 64):
        rs = np.einsum("kab,nb->kna", rotations[k0:k0 + 64], ns)
        c = np.abs(np.einsum("kna,ma->knm", rs, nt))
        out[k0:k0 + 64] = np.einsum("knm,n,m->k", np.exp(kappa * (c - 1.0)), ws, wt)
    return out


def estimate_rotation(
    source: NDArray[np.float64],
    target: NDArray[np.float64],
    voxel: float,
    max_angle: float,
    seed: int = 0,
) -> NDArray[np.float64] | None:
    """Rotation (about any point) best overlaying the normal distributions, or None.

    Normals from several voxel sizes are pooled, since one voxelization of a
    sparse cloud yields few planar cells and the search then locks onto
    chance alignments. Near-identical normals are merged to keep it cheap.
    """
    ns, ws = pooled_normals(source, voxel)
    nt, wt = pooled_normals(target, voxel)
    if len(ns) < 2 or len(nt) < 2:
        return None
    rng = np.random.default_rng(seed)
    if len(ns) > MAX_NORMALS:
        i = np.sort(rng.choice(len(ns), MAX_NORMALS, replace=False))
        ns, ws = ns[i], ws[i]
    if len(nt) > MAX_NORMALS:
        i = np.sort(rng.choice(len(nt), MAX_NORMALS, replace=False))
        nt, wt = nt[i], wt[i]

    step = np.radians(GRID_STEP_DEG)
    k = int(np.ceil(max_angle / step))
    grid = np.array(list(itertools.product(range(-k, k + 1), repeat=3)), dtype=np.float64) * step
    grid = grid[np.linalg.norm(grid, axis=1) <= max_angle + 1e-12]
    coarse = orientation_score(rotations_from_vectors(grid), ns, ws, nt, wt, _kappa(COARSE_KERNEL_DEG))
    starts = grid[np.argsort(-coarse, kind="stable")[:REFINE_STARTS]]

    fine = _kappa(FINE_KERNEL_DEG)
    moves = np.array([s for s in itertools.product((-1, 0, 1), repeat=3) if any(s)], dtype=np.float64)
    best_w, best_v = starts[0], -np.inf
    for w in starts:
        cur = orientation_score(rotations_from_vectors(w), ns, ws, nt, wt, fine)[0]
        d = step / 2
        while d > np.radians(MIN_STEP_DEG):
            cand = w + moves * d
            cand = cand[np.linalg.norm(cand, axis=1) <= max_angle * 1.05]
            if not len(cand):
                break
            vals = orientation_score(rotations_from_vectors(cand), ns, ws, nt, wt, fine)
            j = int(np.argmax(vals))
            if vals[j] > cur:
                cur, w = vals[j], cand[j]
            else:
                d /= 2
        if cur > best_v:
            best_v, best_w = cur, w
    return rotations_from_vectors(best_w)[0]


def candidate_shifts(
    source: NDArray[np.float64],
    target: NDArray[np.float64],
    voxel: float,
    max_shift: float,
    count: int,
) -> list[NDArray[np.float64]]:
    """Strongest shifts of ``source`` onto ``target`` by balanced FFT correlation."""
    pad = max_shift + 2 * voxel
    lo = np.minimum(target.min(axis=0), source.min(axis=0)) - pad
    hi = np.maximum(target.max(axis=0), source.max(axis=0)) + pad
    shape = tuple(int(x) for x in np.ceil((hi - lo) / voxel) + 1)

    def grid(points):
        centers, weights = balanced_voxels(points, voxel)
        g = np.zeros(shape)
        np.add.at(g, tuple(np.floor((centers - lo) / voxel).astype(np.int64).T), weights)
        return g

    freqs = [np.fft.fftfreq(n) for n in shape[:2]] + [np.fft.rfftfreq(shape[2])]
    f2 = freqs[0][:, None, None] ** 2 + freqs[1][None, :, None] ** 2 + freqs[2][None, None, :] ** 2
    blur = np.exp(-2.0 * np.pi**2 * f2)  # Gaussian, sigma = one voxel
    spec = np.fft.rfftn(grid(target)) * np.conj(np.fft.rfftn(grid(source))) * blur
    corr = np.fft.irfftn(spec, s=shape, axes=(0, 1, 2))

    sh = np.array(shape)
    limit = int(np.ceil(max_shift / voxel))
    for axis in range(3):
        offs = np.arange(shape[axis])
        offs = np.where(offs > sh[axis] // 2, offs - sh[axis], offs)
        index = [slice(None)] * 3
        index[axis] = np.abs(offs) > limit
        corr[tuple(index)] = -np.inf

    out = []
    for _ in range(count):
        flat = int(np.argmax(corr))
        if not np.isfinite(corr.flat[flat]):
            break
        a = np.array(np.unravel_index(flat, shape))
        out.append(np.where(a > sh // 2, a - sh, a) * voxel)
        near = tuple((a[d] + np.arange(-2, 3)) % sh[d] for d in range(3))
        corr[np.ix_(*near)] = -np.inf  # suppress this peak's neighbourhood
    return out


@dataclass(frozen=True)
class CoarseParams:
    max_angle: float  # radians
    max_shift: float
    normal_voxel: float
    grid_voxel: float
    candidates: int
    seed: int = 0


def candidate_starts(source: PointCloud, target: PointCloud, p: CoarseParams) -> list[RigidTransform]:
    """Starting poses for ``source``: the identity first, then coarse estimates."""
    starts = [RigidTransform.identity()]
    src, tgt = source.points, target.points
    if len(src) < NORMAL_MIN_POINTS or len(tgt) < NORMAL_MIN_POINTS:
        return starts
    rot = estimate_rotation(src, tgt, p.normal_voxel, p.max_angle, p.seed)
    if rot is None:
        return starts
    c = src.mean(axis=0)
    moved = (src - c) @ rot.T + c
    for shift in candidate_shifts(moved, tgt, p.grid_voxel, p.max_shift, p.candidates):
        starts.append(RigidTransform(rot, c - rot @ c + shift))
    return starts


def point_spacing(tree: KdTree) -> float:
    """Median distance from a point to its nearest distinct neighbour."""
    if tree.n < 2:
        return 0.0
    d = np.sqrt(tree.nearest_other()[1])
    d = d[d > 0]
    return float(np.median(d)) if d.size else 0.0


def overlap_score(points: NDArray[np.float64], tree: KdTree, radius: float) -> float:
    """Share of ``points`` within ``radius`` of the tree's points."""
    _, d2 = tree.query(points)
    return float(np.mean(d2 <= radius * radius))


def best_start(
    source: PointCloud,
    target: PointCloud,
    params: CoarseParams,
    align: Callable[[RigidTransform], T],
    tree: KdTree,
    sample: NDArray[np.int64],
    spacing: float | None = None,
) -> tuple[T, float, int]:
    """Run ``align`` from every candidate start; return ``(result, score, index)``.

    ``align`` maps a start pose to a result with a ``transform`` attribute.

    ``sample`` indexes the source points used for scoring. Earlier candidates
    win ties. Starts whose alignment raises ``ValueError`` or ``RuntimeError``
    are skipped; if all fail the last error propagates. ``spacing`` overrides
    the target point spacing measured from ``tree``.
    """
    radius = 0.5 * (point_spacing(tree) if spacing is None else spacing)
    best = None
    error: Exception | None = None
    pts = source.points[sample]
    for i, start in enumerate(candidate_starts(source, target, params)):
        try:
            result = align(start)
        except (ValueError, RuntimeError) as exc:
            error = exc
            continue
        score = overlap_score(result.transform.apply(pts), tree, radius)
        if best is None or score > best[1]:
            best = (result, score, i)
    if best is None:
        assert error is not None
        raise error
    return best
