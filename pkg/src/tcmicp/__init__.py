"""Multi-scan rigid point cloud registration."""

from .geometry import (
    Aabb,
    GeometryError,
    PointCloud,
    RigidTransform,
    apply_transform,
    closest_pair_sq,
    compose,
)
from .kdtree import BACKEND, KdTree, nearest_neighbor

__all__ = [
    "Aabb",
    "BACKEND",
    "GeometryError",
    "KdTree",
    "PointCloud",
    "RigidTransform",
    "apply_transform",
    "closest_pair_sq",
    "compose",
    "nearest_neighbor",
]
