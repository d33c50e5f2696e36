"""Pairwise alignment and multi-scan merging.

``align_pair_lp`` repeatedly matches points, fits a linearized rigid motion
with the simplex solver and re-applies the exact rotation. ``refine``
polishes the result with a compass search over the six motion parameters,
optionally accepting worse moves under an annealing schedule. ``tcm_icp``
runs the whole merge loop; ``icp_baseline`` is plain point-to-point ICP.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from . import coarse, tcm
from .geometry import PointCloud, RigidTransform, compose
from .kdtree import KdTree
from .lp import (
    DegenerateCorrespondences,
    Status,
    build_rigid_fit_lp,
    omega_to_rotation,
    rotations_from_vectors,
    solve,
    unpack_rigid_fit,
)
from .preprocess import PreprocessConfig, preprocess

log = logging.getLogger(__name__)

REFINE_OBJECTIVES = ("nn", "tcm")


class AlignmentFailed(RuntimeError):
    def __init__(self, cloud_id: str, reason: str):
        super().__init__(f"alignment of {cloud_id!r} failed: {reason}")
        self.cloud_id = cloud_id
        self.reason = reason


@dataclass(frozen=True)
class RegisterConfig:
    max_lp_rounds: int = 30
    pair_subsample: int = 200
    convergence_eps: float = 1e-6
    refine_delta: float = 0.01  # radians; translations use refine_delta * scene diameter
    refine_rounds: int = 20
    refine_points: int = 200
    refine_objective: str = "nn"
    anneal_T0: float = 1.0
    anneal_cooling: float = 0.9
    max_rotation_step: float = 0.25  # radians per LP round
    reciprocal: bool = True
    coarse: bool = True  # global start search before the local fit
    coarse_max_angle_deg: float = 15.0
    coarse_max_shift_frac: float = 0.3  # of the source's bounding-box diagonal
    coarse_candidates: int = 24
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.max_lp_rounds < 1 or self.pair_subsample < 3 or self.refine_points < 2:
            raise ValueError("round and sample counts must be positive (pairs >= 3)")
        if not (self.convergence_eps > 0 and self.refine_delta > 0 and self.max_rotation_step > 0):
            raise ValueError("tolerances and steps must be positive")
        if self.refine_rounds < 0 or self.anneal_T0 < 0:
            raise ValueError("refine_rounds and anneal_T0 must be non-negative")
        if not 0 < self.anneal_cooling < 1:
            raise ValueError("anneal_cooling must lie in (0, 1)")
        if not (0 <= self.coarse_max_angle_deg <= 90 and self.coarse_max_shift_frac >= 0
                and self.coarse_candidates >= 0):
            raise ValueError("coarse search bounds must be non-negative (angle <= 90 degrees)")
        if self.refine_objective not in REFINE_OBJECTIVES:
            raise ValueError(f"refine_objective must be one of {REFINE_OBJECTIVES}")


@dataclass(frozen=True)
class PairAlignment:
    transform: RigidTransform
    final_objective: float
    rounds_used: int
    converged: bool


class Pairs(NamedTuple):
    source: NDArray[np.float64]
    target: NDArray[np.float64]
    source_index: NDArray[np.int64]
    target_index: NDArray[np.int64]
    distance: NDArray[np.float64]


def _sample_index(n: int, cap: int, seed: int) -> NDArray[np.int64]:
    if n <= cap:
        return np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=cap, replace=False)).astype(np.int64)


def match_pairs(
    source: PointCloud,
    target_tree: KdTree,
    cfg: RegisterConfig,
    source_tree: KdTree | None = None,
    pose: RigidTransform | None = None,
) -> Pairs:
    """Nearest-neighbour pairs for a seeded subsample of ``source`` placed by ``pose``.

    Pairs farther apart than three times the median pair distance are dropped.
    With ``cfg.reciprocal`` a pair also has to be mutual: the source point
    must be (within ``1e-12`` relative) the nearest source point of its match.
    ``source_tree`` indexes the unmoved source; the check runs in that frame.
    """
    idx = _sample_index(len(source), cfg.pair_subsample, cfg.rng_seed)
    base = source.points[idx]
    src = base if pose is None else pose.apply(base)
    tidx, d2 = target_tree.query(src)
    keep = np.ones(len(idx), dtype=bool)
    if cfg.reciprocal:
        back_tree = source_tree or KdTree(source)
        tgt = target_tree.points[tidx]
        if pose is not None:
            tgt = pose.inverse().apply(tgt)
        back_idx, back_d2 = back_tree.query(tgt)
        diff = base - tgt
        own = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
        # ties count as mutual: another source point at exactly the same distance is fine
        keep = (back_idx == idx) | (own <= back_d2 * (1 + 1e-12))
        if keep.sum() < 3:
            keep[:] = True
    dist = np.sqrt(d2)
    keep &= dist <= 3.0 * np.median(dist[keep])
    if keep.sum() < 3:
        raise DegenerateCorrespondences(f"only {int(keep.sum())} pairs survive rejection")
    return Pairs(src[keep], target_tree.points[tidx[keep]], idx[keep], tidx[keep], dist[keep])


def _about(center: NDArray[np.float64], rotation: NDArray[np.float64],
           shift: NDArray[np.float64]) -> RigidTransform:
    """``x -> rotation (x - center) + center + shift``."""
    return RigidTransform(rotation, center - rotation @ center + shift)


def _check_sizes(source: PointCloud, target: PointCloud) -> None:
    if len(source) < 3 or len(target) < 3:
        raise DegenerateCorrespondences("both clouds need at least three points")


def align_pair_lp(
    source: PointCloud,
    target: PointCloud,
    cfg: RegisterConfig = RegisterConfig(),
    init: RigidTransform | None = None,
    target_tree: KdTree | None = None,
    source_tree: KdTree | None = None,
) -> PairAlignment:
    """Align ``source`` onto ``target`` with iterated L1 linear programs."""
    _check_sizes(source, target)
    tree = target_tree or KdTree(target)
    if cfg.reciprocal and source_tree is None:
        source_tree = KdTree(source)
    current = init or RigidTransform.identity()
    objective = float("nan")
    converged = False
    rounds = 0
    for rounds in range(1, cfg.max_lp_rounds + 1):
        pairs = match_pairs(source, tree, cfg, source_tree, current)
        center = pairs.source.mean(axis=0)
        lp = build_rigid_fit_lp(sources=pairs.source - center, targets=pairs.target - center)
        sol = solve(lp)
        if sol.status is not Status.OPTIMAL:
            raise AlignmentFailed(source.id, f"LP {sol.status.value} in round {rounds}")
        omega, shift = unpack_rigid_fit(sol.x)
        objective = sol.objective / len(pairs.source)
        norm = float(np.linalg.norm(omega))
        if norm > cfg.max_rotation_step:
            omega = omega * (cfg.max_rotation_step / norm)
        current = compose(_about(center, omega_to_rotation(omega), shift), current)
        if max(np.abs(omega).max(), np.abs(shift).max()) < cfg.convergence_eps:
            converged = True
            break
    return PairAlignment(current, objective, rounds, converged)


# -- refinement ----------------------------------------------------------------

_STEPS = np.array([s for s in itertools.product((-1, 0, 1), repeat=6) if any(s)], dtype=float)


class _Objective:
    """Objective over motion parameters ``(omega, t)`` applied about the source centroid."""

    def __init__(self, source: NDArray[np.float64], target: NDArray[np.float64], kind: str,
                 tree: KdTree | None = None, spacing: float | None = None):
        self.source = source
        self.center = source.mean(axis=0)
        self.local = source - self.center
        self.target = target
        self.kind = kind
        if kind == "tcm":
            # closest-pair spacing and point counts do not change under rigid motion
            g = abs(tcm.closest_pair_sq(PointCloud(source)) - tcm.closest_pair_sq(PointCloud(target)))
            self.gh = g / (len(source) * len(target))
            self.target_center = target.mean(axis=0)
        else:
            # distances are capped at three target point spacings, so points
            # outside the overlap add a constant instead of pulling the fit
            self.tree = tree or KdTree(target)
            if spacing is None:
                spacing = coarse.point_spacing(self.tree)
            if spacing > 0:
                self.cap = 3.0 * spacing
            else:
                self.cap = float(np.sqrt(self.tree.query(source)[1]).max()) or 1.0

    def __call__(self, params: NDArray[np.float64]) -> NDArray[np.float64]:
        params = np.atleast_2d(params)
        R = rotations_from_vectors(params[:, :3])
        moved = np.einsum("kij,nj->kni", R, self.local) + (self.center + params[:, 3:])[:, None, :]
        if self.kind == "tcm":
            d = moved - self.target_center
            x = (d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]).min(axis=1)
            moved_center = self.center + params[:, 3:]
            e = self.target[None, :, :] - moved_center[:, None, :]
            y = (e[..., 0] * e[..., 0] + e[..., 1] * e[..., 1] + e[..., 2] * e[..., 2]).min(axis=1)
            return (x + y) * self.gh
        _, d2 = self.tree.query(moved.reshape(-1, 3))
        d = np.minimum(np.sqrt(d2), self.cap).reshape(len(params), -1)
        return d.mean(axis=1)

    def transform(self, params: NDArray[np.float64]) -> RigidTransform:
        return _about(self.center, omega_to_rotation(params[:3]), params[3:])


def _make_objective(src: NDArray[np.float64], target: PointCloud, cfg: RegisterConfig,
                    spacing: float | None = None) -> _Objective:
    """Source subsampled either way; the NN objective looks up the full target, tau a subsample."""
    if cfg.refine_objective == "nn":
        return _Objective(src, target.points, "nn", spacing=spacing)
    tgt = target.points[_sample_index(len(target), cfg.refine_points, cfg.rng_seed + 1)]
    return _Objective(src, tgt, "tcm")


def refine(
    source: PointCloud,
    target: PointCloud,
    init: RigidTransform,
    cfg: RegisterConfig = RegisterConfig(),
    scene_diameter: float | None = None,
    target_spacing: float | None = None,
) -> RigidTransform:
    """Compass search with an annealed acceptance rule; returns the best transform seen.

    Each round tries all 3**6 - 1 combinations of {-delta, 0, +delta} on the
    three rotation and three translation parameters and moves to the best
    neighbour. A worse neighbour is accepted with probability
    ``exp(-rel_increase / T)`` where ``T`` starts at ``anneal_T0`` and is
    multiplied by ``anneal_cooling`` each round; ``anneal_T0 = 0`` gives a
    pure descent. The step halves whenever no move is taken.
    ``target_spacing`` overrides the spacing that sets the distance cap.
    """
    if cfg.refine_rounds == 0:
        return init
    diameter = scene_diameter or max(target.aabb().diagonal, source.aabb().diagonal, 1e-12)
    rng = np.random.default_rng(cfg.rng_seed)
    src = init.apply(source.points[_sample_index(len(source), cfg.refine_points, cfg.rng_seed)])
    if cfg.refine_objective == "tcm" and (len(src) < 2 or len(target) < 2):
        return init
    obj = _make_objective(src, target, cfg, target_spacing)

    scale = np.array([1.0, 1.0, 1.0, diameter, diameter, diameter])
    current = np.zeros(6)
    cur_val = float(obj(current)[0])
    best, best_val = current.copy(), cur_val
    ref = abs(cur_val) if cur_val != 0 else 1.0
    delta = cfg.refine_delta
    temp = cfg.anneal_T0
    for _ in range(cfg.refine_rounds):
        if delta < cfg.convergence_eps:
            break
        cand = current + _STEPS * (delta * scale)
        vals = obj(cand)
        k = int(np.argmin(vals))
        new_val = float(vals[k])
        moved = False
        if new_val < cur_val:
            moved = True
        elif temp > 0:
            moved = bool(rng.random() < np.exp(-(new_val - cur_val) / (ref * temp)))
        if moved:
            current, cur_val = cand[k], new_val
            if cur_val < best_val:
                best, best_val = current.copy(), cur_val
        else:
            delta *= 0.5
        temp *= cfg.anneal_cooling
    if best_val >= obj(np.zeros(6))[0]:
        return init
    return compose(obj.transform(best), init)


def refine_objective_value(
    source: PointCloud, target: PointCloud, t: RigidTransform, cfg: RegisterConfig = RegisterConfig(),
    target_spacing: float | None = None,
) -> float:
    """The objective ``refine`` minimizes, evaluated at transform ``t``."""
    src = t.apply(source.points[_sample_index(len(source), cfg.refine_points, cfg.rng_seed)])
    return float(_make_objective(src, target, cfg, target_spacing)(np.zeros(6))[0])


def _merged_spacing(spacings: Sequence[float], members: Sequence[int]) -> float | None:
    """Spacing of a merged cloud, taken from its members.

    Overlapping scans of the same surface can share nearly coincident points,
    which would drive a spacing measured on the union towards zero.
    """
    vals = [spacings[i] for i in members if spacings[i] > 0]
    return float(np.median(vals)) if vals else None


# -- ICP baseline ----------------------------------------------------------------

def best_fit_transform(src: NDArray[np.float64], dst: NDArray[np.float64]) -> RigidTransform:
    """Least-squares rigid motion taking ``src`` onto ``dst`` (SVD of the cross-covariance)."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return RigidTransform(R, cd - R @ cs)


def icp_baseline(
    source: PointCloud,
    target: PointCloud,
    cfg: RegisterConfig = RegisterConfig(),
    init: RigidTransform | None = None,
    target_tree: KdTree | None = None,
    source_tree: KdTree | None = None,
) -> PairAlignment:
    """Point-to-point ICP with closed-form updates; stops when RMS stalls."""
    _check_sizes(source, target)
    tree = target_tree or KdTree(target)
    if cfg.reciprocal and source_tree is None:
        source_tree = KdTree(source)
    current = init or RigidTransform.identity()
    prev = np.inf
    rms = np.inf
    converged = False
    rounds = 0
    for rounds in range(1, cfg.max_lp_rounds + 1):
        pairs = match_pairs(source, tree, cfg, source_tree, current)
        step = best_fit_transform(pairs.source, pairs.target)
        current = compose(step, current)
        res = step.apply(pairs.source) - pairs.target
        rms = float(np.sqrt(np.mean(np.sum(res * res, axis=1))))
        if abs(prev - rms) < cfg.convergence_eps:
            converged = True
            break
        prev = rms
    return PairAlignment(current, rms, rounds, converged)


PAIR_METHODS = ("lp", "icp")
SCORE_POINTS = 2000


def align_pair(
    source: PointCloud,
    target: PointCloud,
    cfg: RegisterConfig = RegisterConfig(),
    method: str = "lp",
    target_tree: KdTree | None = None,
    target_spacing: float | None = None,
) -> PairAlignment:
    """Local alignment, started from the best coarse candidate when ``cfg.coarse`` is set.

    ``method`` picks the local aligner: ``"lp"`` (iterated L1 fits) or
    ``"icp"`` (closed-form point-to-point ICP). ``target_spacing`` overrides
    the target's measured point spacing used to score candidates.
    """
    if method not in PAIR_METHODS:
        raise ValueError(f"method must be one of {PAIR_METHODS}")
    local = align_pair_lp if method == "lp" else icp_baseline
    tree = target_tree or KdTree(target)
    scale = source.aabb().diagonal
    src_tree = KdTree(source) if cfg.reciprocal else None
    if not cfg.coarse or scale <= 0:
        return local(source, target, cfg, target_tree=tree, source_tree=src_tree)
    params = coarse.CoarseParams(
        max_angle=float(np.radians(cfg.coarse_max_angle_deg)),
        max_shift=cfg.coarse_max_shift_frac * scale,
        normal_voxel=scale / 40.0,
        grid_voxel=scale / 64.0,
        candidates=cfg.coarse_candidates,
        seed=cfg.rng_seed,
    )
    sample = _sample_index(len(source), SCORE_POINTS, cfg.rng_seed)
    result, score, index = coarse.best_start(
        source, target, params, lambda start: local(source, target, cfg, start, tree, src_tree),
        tree, sample, target_spacing,
    )
    log.debug("%s: start %d chosen, overlap score %.3f", source.id, index, score)
    return result


# -- multi-scan pipeline ----------------------------------------------------------

@dataclass
class RegistrationResult:
    merged: PointCloud
    transforms: list[tuple[str, RigidTransform]]
    reference: int
    order: list[int]
    preprocessed_sizes: list[int]
    iterations: int = 0
    removed: list[int] = field(default_factory=list)


def tcm_icp(
    clouds: Sequence[PointCloud],
    cfg: RegisterConfig = RegisterConfig(),
    pre_cfg: PreprocessConfig | None = PreprocessConfig(),
    graph_threshold: float | None = None,
) -> RegistrationResult:
    """Merge scans in least-tau order onto the best-connected reference scan.

    ``pre_cfg=None`` skips outlier removal. ``graph_threshold=None`` uses half
    the mean bounding-box diagonal.
    """
    if len(clouds) < 2:
        raise ValueError("need at least two clouds")
    if pre_cfg is not None:
        cleaned, removed = [], []
        for c in clouds:
            out, r = preprocess(c, pre_cfg)
            cleaned.append(out)
            removed.append(r)
    else:
        cleaned, removed = list(clouds), [0] * len(clouds)
    threshold = tcm.default_threshold(cleaned) if graph_threshold is None else graph_threshold
    graph = tcm.build_graph(cleaned, threshold, seed=cfg.rng_seed)
    ref = tcm.select_reference(graph, cleaned)
    diameter = float(np.mean([c.aabb().diagonal for c in cleaned]))
    spacing = [coarse.point_spacing(KdTree(c)) for c in cleaned]
    log.info("reference cloud %d (%s), threshold %.4g, edges %s",
             ref, cleaned[ref].id, threshold, graph.edges)

    transforms: list[RigidTransform | None] = [None] * len(cleaned)
    transforms[ref] = RigidTransform.identity()
    merged_pts = [cleaned[ref].points]
    merged = cleaned[ref]
    remaining = [i for i in range(len(cleaned)) if i != ref]
    order = [ref]
    iterations = 0
    while remaining:
        spacings = None
        merged_spacing = tcm.closest_pair_sq(merged) if len(merged) > 1 else 0.0
        cands = [cleaned[i] for i in remaining]
        if min(len(c) for c in cands) > 1:
            spacings = [tcm.closest_pair_sq(c) for c in cands]
            k, _ = tcm.select_candidate(cands, merged, merged_spacing=merged_spacing,
                                        candidate_spacings=spacings, seed=cfg.rng_seed)
        else:
            k = 0
        q = remaining.pop(k)
        cloud = cleaned[q]
        try:
            tree = KdTree(merged)
            sp = _merged_spacing(spacing, order)
            pair = align_pair(cloud, merged, cfg, "lp", tree, sp)
            final = refine(cloud, merged, pair.transform, cfg, diameter, sp)
        except (DegenerateCorrespondences, AlignmentFailed) as exc:
            raise AlignmentFailed(cloud.id, str(exc)) from exc
        iterations += pair.rounds_used
        transforms[q] = final
        merged_pts.append(final.apply(cloud.points))
        merged = PointCloud(np.vstack(merged_pts), "merged")
        order.append(q)
        log.info("merged %s after %d LP rounds", cloud.id, pair.rounds_used)
    return RegistrationResult(
        merged, [(c.id, t) for c, t in zip(cleaned, transforms)],  # type: ignore[misc]
        ref, order, [len(c) for c in cleaned], iterations, removed,
    )


def icp_multi(
    clouds: Sequence[PointCloud],
    cfg: RegisterConfig = RegisterConfig(),
    graph_threshold: float | None = None,
) -> RegistrationResult:
    """Baseline pipeline: same reference choice, input-order merging, plain ICP, no cleaning."""
    if len(clouds) < 2:
        raise ValueError("need at least two clouds")
    threshold = tcm.default_threshold(clouds) if graph_threshold is None else graph_threshold
    ref = tcm.select_reference(tcm.build_graph(clouds, threshold, seed=cfg.rng_seed), clouds)
    spacing = [coarse.point_spacing(KdTree(c)) for c in clouds]
    transforms: list[RigidTransform | None] = [None] * len(clouds)
    transforms[ref] = RigidTransform.identity()
    merged_pts = [clouds[ref].points]
    merged = clouds[ref]
    order = [ref]
    iterations = 0
    for q in range(len(clouds)):
        if q == ref:
            continue
        try:
            pair = align_pair(clouds[q], merged, cfg, "icp", None, _merged_spacing(spacing, order))
        except (DegenerateCorrespondences, AlignmentFailed) as exc:
            raise AlignmentFailed(clouds[q].id, str(exc)) from exc
        iterations += pair.rounds_used
        transforms[q] = pair.transform
        merged_pts.append(pair.transform.apply(clouds[q].points))
        merged = PointCloud(np.vstack(merged_pts), "merged")
        order.append(q)
    return RegistrationResult(
        merged, [(c.id, t) for c, t in zip(clouds, transforms)],  # type: ignore[misc]
        ref, order, [len(c) for c in clouds], iterations, [0] * len(clouds),
    )
