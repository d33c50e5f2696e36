"""Metrics, degradations, synthetic scenes and degradation sweeps."""

from __future__ import annotations

import csv
import enum
import io
import time
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .geometry import Aabb, PointCloud, RigidTransform, compose
from .kdtree import KdTree
from .lp import omega_to_rotation
from .preprocess import PreprocessConfig
from .register import AlignmentFailed, RegisterConfig, RegistrationResult, icp_multi, tcm_icp

DEFAULT_METRIC_CAP = 5000

CSV_HEADER = (
    "method", "kind", "level", "rms", "c2c_mean", "c2c_std",
    "points_used", "iterations", "wall_time_ms", "failed",
)


# -- metrics --------------------------------------------------------------------

def _subsample(points: NDArray[np.float64], cap: int, seed: int) -> NDArray[np.float64]:
    if len(points) <= cap:
        return points
    rng = np.random.default_rng(seed)
    return points[np.sort(rng.choice(len(points), size=cap, replace=False))]


def rms_error(registered: PointCloud, truth: PointCloud, cap: int = DEFAULT_METRIC_CAP,
              seed: int = 0) -> float:
    """Root mean square nearest-neighbour distance from ``registered`` (subsampled) to ``truth``."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    pts = _subsample(registered.points, cap, seed)
    _, d2 = KdTree(truth).query(pts)
    return float(np.sqrt(d2.mean()))


def cloud_to_cloud(a: PointCloud, b: PointCloud) -> tuple[float, float]:
    """Mean and population standard deviation of nearest-neighbour distances a -> b."""
    _, d2 = KdTree(b).query(a.points)
    d = np.sqrt(d2)
    return float(d.mean()), float(d.std())


@dataclass(frozen=True)
class MetricReport:
    rms: float
    c2c_mean: float
    c2c_std: float
    point_count_used: int
    wall_time_ms: int
    iterations: int


# -- degradations ---------------------------------------------------------------

class Degradation(enum.Enum):
    NOISE = "noise"
    ISOLATED_POINTS = "isolated"
    FEATURE_BLUR = "blur"
    OCCLUSION = "occlusion"
    REMOVAL = "removal"


@dataclass(frozen=True)
class DegradationSpec:
    kind: Degradation
    level: float
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.level <= 100:
            raise ValueError(f"level {self.level} outside [0, 100]")
        object.__setattr__(self, "kind", Degradation(self.kind))


NOISE_SIGMA_FRAC = 0.01
BLUR_SIGMA_FRAC = 0.05
ISOLATED_BOX_SCALE = 1.5


def degrade(cloud: PointCloud, spec: DegradationSpec, scene: Aabb) -> PointCloud:
    """Apply one degradation at ``spec.level`` percent. Deterministic in ``spec.rng_seed``."""
    if spec.level == 0:
        return cloud
    rng = np.random.default_rng(spec.rng_seed)
    pts = cloud.points
    n = len(pts)
    frac = spec.level / 100.0
    diag = scene.diagonal
    kind = spec.kind
    if kind is Degradation.NOISE:
        m = int(round(frac * n))
        idx = rng.choice(n, size=m, replace=False)
        out = pts.copy()
        out[idx] += rng.normal(0.0, NOISE_SIGMA_FRAC * diag, size=(m, 3))
        return cloud.with_points(out)
    if kind is Degradation.ISOLATED_POINTS:
        m = int(round(frac * n))
        box = scene.scaled(ISOLATED_BOX_SCALE)
        extra = rng.uniform(box.min, box.max, size=(m, 3))
        return cloud.with_points(np.vstack([pts, extra]))
    if kind is Degradation.FEATURE_BLUR:
        m = int(round(frac * n))
        base = pts[rng.integers(n, size=m)]
        extra = base + rng.normal(0.0, BLUR_SIGMA_FRAC * diag, size=(m, 3))
        return cloud.with_points(np.vstack([pts, extra]))
    if kind is Degradation.REMOVAL:
        m = int(round(frac * n))
        drop = rng.choice(n, size=m, replace=False)
        keep = np.ones(n, dtype=bool)
        keep[drop] = False
        if not keep.any():
            keep[int(rng.integers(n))] = True
        return cloud.subset(np.flatnonzero(keep))
    if kind is Degradation.OCCLUSION:
        # a box with the scene's aspect ratio and `level`% of its volume
        side = scene.extent * frac ** (1.0 / 3.0)
        lo = scene.min + rng.uniform(0.0, 1.0, 3) * (scene.extent - side)
        hidden = np.all((pts >= lo) & (pts <= lo + side), axis=1)
        if hidden.all():
            hidden[int(rng.integers(n))] = False
        return cloud.subset(np.flatnonzero(~hidden))
    raise ValueError(f"unknown degradation {kind}")  # pragma: no cover


# -- synthetic scenes ------------------------------------------------------------

SCENE_SIZE = 20.0


def _sample_rect(rng, origin, u, v, n):
    a = rng.uniform(0.0, 1.0, (n, 1))
    b = rng.uniform(0.0, 1.0, (n, 1))
    return origin + a * u + b * v


def urban_scene(n_points: int, rng: np.random.Generator, n_buildings: int = 7) -> NDArray[np.float64]:
    """Ground plane plus box buildings, surfaces sampled uniformly by area, centred at the origin."""
    half = SCENE_SIZE / 2
    faces = [(np.array([-half, -half, 0.0]), np.array([SCENE_SIZE, 0, 0.0]),
              np.array([0.0, SCENE_SIZE, 0]))]
    for _ in range(n_buildings):
        w, d = rng.uniform(1.5, 4.0, 2)
        h = rng.uniform(2.0, 7.0)
        x0, y0 = rng.uniform(-half + 0.5, half - 0.5 - np.array([w, d]))
        ex, ey, ez = np.array([w, 0, 0.0]), np.array([0, d, 0.0]), np.array([0, 0, h])
        o = np.array([x0, y0, 0.0])
        faces += [(o, ex, ez), (o + ey, ex, ez), (o, ey, ez), (o + ex, ey, ez), (o + ez, ex, ey)]
    areas = np.array([np.linalg.norm(np.cross(u, v)) for _, u, v in faces])
    counts = rng.multinomial(n_points, areas / areas.sum())
    pts = np.vstack([_sample_rect(rng, o, u, v, c) for (o, u, v), c in zip(faces, counts) if c])
    pts[:, 2] -= 2.0  # roughly centre vertically
    return pts


def random_rotation(max_angle: float, rng: np.random.Generator) -> NDArray[np.float64]:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return omega_to_rotation(axis * rng.uniform(0.0, max_angle))


@dataclass
class SyntheticScene:
    scans: list[PointCloud]
    transforms: list[RigidTransform]  # world -> scan frame
    world_scans: list[PointCloud] = field(default_factory=list)

    @property
    def diameter(self) -> float:
        return Aabb.union([c.aabb() for c in self.world_scans]).diagonal

    def truth_in_frame(self, ref: int) -> PointCloud:
        """All clean scan points expressed in scan ``ref``'s frame."""
        g = self.transforms[ref]
        return PointCloud(np.vstack([g.apply(c.points) for c in self.world_scans]), "truth")

    def relative_truth(self, k: int, ref: int) -> RigidTransform:
        """The transform carrying scan ``k`` into scan ``ref``'s frame."""
        return compose(self.transforms[ref], self.transforms[k].inverse())


def synth_scene(
    n_scans: int,
    points_per_scan: int,
    max_rotation_deg: float,
    max_translation_frac: float,
    rng_seed: int,
    overlap: float = 0.5,
) -> SyntheticScene:
    """Overlapping slab views of a synthetic urban scene with random rigid motions.

    The scene is cut into ``n_scans`` slabs along x; consecutive slabs share
    the fraction ``overlap`` of their width and the very same sample points in
    the shared region. Scan 0 keeps the world frame. Returns the scans (in
    their own frames) and the world-to-scan transforms.
    """
    if n_scans < 2:
        raise ValueError("need at least two scans")
    if not 0 < overlap < 1:
        raise ValueError("overlap must lie in (0, 1)")
    rng = np.random.default_rng(rng_seed)
    width = SCENE_SIZE / ((n_scans - 1) * (1 - overlap) + 1)
    step = width * (1 - overlap)
    n_base = int(np.ceil(points_per_scan * SCENE_SIZE / width * 1.1))
    base = urban_scene(n_base, rng)
    rank = rng.permutation(len(base))  # shared priority keeps overlaps consistent under capping
    world_scans, scans, transforms = [], [], []
    diameter = float(np.linalg.norm(base.max(axis=0) - base.min(axis=0)))
    x0 = -SCENE_SIZE / 2
    for i in range(n_scans):
        lo = x0 + i * step
        inside = np.flatnonzero((base[:, 0] >= lo) & (base[:, 0] <= lo + width))
        if len(inside) > points_per_scan:
            inside = np.sort(inside[np.argsort(rank[inside], kind="stable")[:points_per_scan]])
        world = PointCloud(base[inside], f"scan{i:02d}")
        if i == 0:
            g = RigidTransform.identity()
        else:
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            shift = direction * rng.uniform(0.0, max_translation_frac * diameter)
            g = RigidTransform(random_rotation(np.radians(max_rotation_deg), rng), shift)
        world_scans.append(world)
        transforms.append(g)
        scans.append(PointCloud(g.apply(world.points), world.id))
    return SyntheticScene(scans, transforms, world_scans)


def overlap_fraction(a: PointCloud, b: PointCloud, tol: float = 1e-9) -> float:
    """Share of ``a``'s points that coincide (within ``tol``) with a point of ``b``."""
    _, d2 = KdTree(b).query(a.points)
    return float(np.mean(np.sqrt(d2) <= tol))


# -- experiments -----------------------------------------------------------------

class Method(enum.Enum):
    TCM_ICP = "tcm-icp"
    ICP = "icp"


@dataclass(frozen=True)
class SceneParams:
    n_scans: int = 2
    points_per_scan: int = 2000
    max_rotation_deg: float = 10.0
    max_translation_frac: float = 0.1
    overlap: float = 0.5


@dataclass(frozen=True)
class ExperimentRow:
    method: str
    kind: str
    level: float
    report: MetricReport | None
    failed: bool

    def as_csv(self) -> list[str]:
        if self.report is None:
            nums = ["nan", "nan", "nan", "0", "0", "0"]
        else:
            r = self.report
            nums = [_fmt(r.rms), _fmt(r.c2c_mean), _fmt(r.c2c_std), str(r.point_count_used),
                    str(r.iterations), str(r.wall_time_ms)]
        return [self.method, self.kind, _fmt(self.level), *nums, "1" if self.failed else "0"]


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def register_scene(
    method: Method,
    scans: Sequence[PointCloud],
    cfg: RegisterConfig,
    pre_cfg: PreprocessConfig | None,
    graph_threshold: float | None = None,
) -> RegistrationResult:
    if Method(method) is Method.TCM_ICP:
        return tcm_icp(scans, cfg, pre_cfg, graph_threshold)
    return icp_multi(scans, cfg, graph_threshold)


def evaluate_once(
    method: Method,
    scene: SyntheticScene,
    spec: DegradationSpec | None,
    cfg: RegisterConfig = RegisterConfig(),
    pre_cfg: PreprocessConfig | None = PreprocessConfig(),
    cap: int = DEFAULT_METRIC_CAP,
    timing: bool = True,
    graph_threshold: float | None = None,
) -> tuple[MetricReport, RegistrationResult]:
    """Degrade every scan, register, and score the merged cloud against the clean truth."""
    box = Aabb.union([c.aabb() for c in scene.world_scans])
    scans = []
    for i, (s, g) in enumerate(zip(scene.world_scans, scene.transforms)):
        if spec is not None:
            sub = DegradationSpec(spec.kind, spec.level, spec.rng_seed * 1009 + i)
            s = degrade(s, sub, box)
        scans.append(PointCloud(g.apply(s.points), s.id))
    t0 = time.perf_counter()
    result = register_scene(method, scans, cfg, pre_cfg, graph_threshold)
    wall = int(round((time.perf_counter() - t0) * 1000)) if timing else 0
    truth = scene.truth_in_frame(result.reference)
    rms = rms_error(result.merged, truth, cap, seed=cfg.rng_seed)
    mean, std = cloud_to_cloud(result.merged, truth)
    used = min(cap, len(result.merged))
    return MetricReport(rms, mean, std, used, wall, result.iterations), result


def run_experiment(
    method: Method,
    scene_params: SceneParams,
    kinds: Iterable[Degradation],
    levels: Iterable[float],
    seeds: Sequence[int] = (0,),
    cfg: RegisterConfig = RegisterConfig(),
    pre_cfg: PreprocessConfig = PreprocessConfig(),
    cap: int = DEFAULT_METRIC_CAP,
    timing: bool = True,
    graph_threshold: float | None = None,
) -> list[ExperimentRow]:
    """One row per (kind, level); metrics are averaged over ``seeds``.

    A failed alignment marks the row failed and averages the seeds that worked.
    """
    method = Method(method)
    kinds = [Degradation(k) for k in kinds]
    levels = list(levels)
    scenes = {
        s: synth_scene(scene_params.n_scans, scene_params.points_per_scan,
                       scene_params.max_rotation_deg, scene_params.max_translation_frac, s,
                       scene_params.overlap)
        for s in seeds
    } if kinds and levels else {}
    rows = []
    for kind in kinds:
        for level in levels:
            reports, failed = [], False
            for s in seeds:
                spec = DegradationSpec(kind, level, s)
                try:
                    rep, _ = evaluate_once(method, scenes[s], spec, cfg, pre_cfg, cap, timing,
                                           graph_threshold)
                    reports.append(rep)
                except AlignmentFailed:
                    failed = True
            rows.append(ExperimentRow(method.value, kind.value, float(level),
                                      _mean_report(reports), failed))
    return rows


def _mean_report(reports: list[MetricReport]) -> MetricReport | None:
    if not reports:
        return None
    return MetricReport(
        float(np.mean([r.rms for r in reports])),
        float(np.mean([r.c2c_mean for r in reports])),
        float(np.mean([r.c2c_std for r in reports])),
        int(round(np.mean([r.point_count_used for r in reports]))),
        int(round(np.mean([r.wall_time_ms for r in reports]))),
        int(round(np.mean([r.iterations for r in reports]))),
    )


def rows_to_csv(rows: Iterable[ExperimentRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(rows, key=lambda r: (r.method, r.kind, r.level)):
        w.writerow(r.as_csv())
    return buf.getvalue()
