"""Point clouds, rigid transforms and axis-aligned boxes.

Everything here is immutable after construction. Coordinates are float64
arrays of shape ``(n, 3)``; a single point is a length-3 array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

ORTHO_TOL = 1e-9

Points = NDArray[np.float64]


class GeometryError(ValueError):
    """Raised for malformed clouds or transforms."""


def _frozen(a: ArrayLike) -> NDArray[np.float64]:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: Points
    id: str = ""

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim == 1 and pts.size == 3:
            pts = pts.reshape(1, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError(f"cloud {self.id!r}: expected shape (n, 3), got {pts.shape}")
        if pts.shape[0] == 0:
            raise GeometryError(f"cloud {self.id!r} is empty")
        if not np.isfinite(pts).all():
            raise GeometryError(f"cloud {self.id!r} has non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def centroid(self) -> NDArray[np.float64]:
        return self.points.mean(axis=0)

    def aabb(self) -> Aabb:
        return Aabb(self.points.min(axis=0), self.points.max(axis=0))

    def subset(self, index: ArrayLike, id: str | None = None) -> PointCloud:
        return PointCloud(self.points[np.asarray(index)], self.id if id is None else id)

    def with_points(self, points: ArrayLike) -> PointCloud:
        return PointCloud(points, self.id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(
            np.array_equal(self.points, other.points)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Aabb:
    min: NDArray[np.float64]
    max: NDArray[np.float64]

    def __post_init__(self) -> None:
        lo, hi = _frozen(self.min), _frozen(self.max)
        if lo.shape != (3,) or hi.shape != (3,):
            raise GeometryError("box corners must be 3-vectors")
        if np.any(lo > hi):
            raise GeometryError("box min exceeds max")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> NDArray[np.float64]:
        return self.max - self.min

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    @property
    def center(self) -> NDArray[np.float64]:
        return 0.5 * (self.min + self.max)

    def contains(self, points: ArrayLike) -> NDArray[np.bool_]:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((p >= self.min) & (p <= self.max), axis=1)

    def scaled(self, factor: float) -> Aabb:
        half = 0.5 * factor * self.extent
        return Aabb(self.center - half, self.center + half)

    @staticmethod
    def union(boxes: list[Aabb]) -> Aabb:
        return Aabb(
            np.min([b.min for b in boxes], axis=0), np.max([b.max for b in boxes], axis=0)
        )


def orthonormality_error(rotation: ArrayLike) -> float:
    r = np.asarray(rotation, dtype=np.float64)
    return float(np.max(np.abs(r.T @ r - np.eye(3))))


def is_rotation(rotation: ArrayLike, tol: float = ORTHO_TOL) -> bool:
    r = np.asarray(rotation, dtype=np.float64)
    if r.shape != (3, 3) or not np.isfinite(r).all():
        return False
    return orthonormality_error(r) <= tol and np.linalg.det(r) > 0


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> rotation @ x + translation`` with a proper rotation."""

    rotation: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    translation: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        r, t = _frozen(self.rotation), _frozen(self.translation)
        if r.shape != (3, 3) or t.shape != (3,):
            raise GeometryError(f"bad transform shapes {r.shape}, {t.shape}")
        if not np.isfinite(t).all():
            raise GeometryError("translation is not finite")
        if not is_rotation(r):
            raise GeometryError(
                f"rotation is not orthonormal with det +1 (error {orthonormality_error(r):.3g})"
            )
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    def apply(self, points: ArrayLike) -> NDArray[np.float64]:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def as_row(self) -> list[float]:
        """Twelve values: rotation row-major, then translation."""
        return [*self.rotation.ravel().tolist(), *self.translation.tolist()]

    def rotation_angle(self) -> float:
        r = self.rotation
        s = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
        c = 0.5 * (np.trace(r) - 1.0)
        return float(np.arctan2(s, c))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None  # type: ignore[assignment]


def rot_x(angle: float) -> NDArray[np.float64]:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> NDArray[np.float64]:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> NDArray[np.float64]:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def apply_transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    # RigidTransform validates on construction, but arrays may have been swapped in.
    if not is_rotation(t.rotation):
        raise GeometryError("transform rotation fails the orthonormality check")
    return PointCloud(t.apply(cloud.points), cloud.id)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """The transform that applies ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def transform_error(estimate: RigidTransform, truth: RigidTransform) -> tuple[float, float]:
    """Rotation angle (radians) and translation distance between two transforms."""
    delta = compose(estimate, truth.inverse())
    ang = delta.rotation_angle()
    return ang, float(np.linalg.norm(estimate.translation - truth.translation))


def closest_pair_sq(cloud: PointCloud) -> float:
    """Smallest squared distance between two distinct points of ``cloud``."""
    if len(cloud) < 2:
        raise GeometryError("closest pair needs at least two points")
    from .kdtree import KdTree

    _, d2 = KdTree(cloud).nearest_other()
    return float(d2.min())
