"""Exact KD-tree over a point cloud.

The tree is built in Python into flat arrays; queries run in whichever
kernel ``_backend`` selected.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ._backend import BACKEND, kernels as _kernels
from .geometry import PointCloud

DEFAULT_LEAF_SIZE = 16


class KdTree:
    """Static KD-tree. Split axis cycles x, y, z with depth; median splits.

    Nearest-neighbour queries are exact; ties go to the lowest point index.
    """

    def __init__(self, cloud: PointCloud | ArrayLike, leaf_size: int = DEFAULT_LEAF_SIZE):
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise ValueError("KdTree needs a non-empty (n, 3) array")
        self.leaf_size = leaf_size
        self.n = pts.shape[0]
        self._build(pts)
        self._kernel = _kernels

    def _build(self, pts: NDArray[np.float64]) -> None:
        n = pts.shape[0]
        perm = np.arange(n, dtype=np.int64)
        lo, hi, dim, split, left, right = [], [], [], [], [], []

        def new_node(a: int, b: int) -> int:
            lo.append(a)
            hi.append(b)
            dim.append(-1)
            split.append(0.0)
            left.append(-1)
            right.append(-1)
            return len(lo) - 1

        work = [(new_node(0, n), 0)]
        while work:
            node, depth = work.pop()
            a, b = lo[node], hi[node]
            if b - a <= self.leaf_size:
                continue
            axis = depth % 3
            seg = perm[a:b]
            mid = (b - a) // 2
            order = np.argpartition(pts[seg, axis], mid, kind="introselect")
            seg = seg[order]
            perm[a:b] = seg
            dim[node] = axis
            split[node] = float(pts[seg[mid], axis])
            left[node] = new_node(a, a + mid)
            right[node] = new_node(a + mid, b)
            work.append((right[node], depth + 1))
            work.append((left[node], depth + 1))

        self._data = np.array(pts, dtype=np.float64)
        self._data.setflags(write=False)
        self._perm = perm
        self._pts = np.ascontiguousarray(pts[perm])
        self._lo = np.asarray(lo, dtype=np.int64)
        self._hi = np.asarray(hi, dtype=np.int64)
        self._dim = np.asarray(dim, dtype=np.int64)
        self._split = np.asarray(split, dtype=np.float64)
        self._left = np.asarray(left, dtype=np.int64)
        self._right = np.asarray(right, dtype=np.int64)
        for arr in (self._perm, self._pts, self._lo, self._hi, self._dim, self._split,
                    self._left, self._right):
            arr.setflags(write=False)

    @property
    def points(self) -> NDArray[np.float64]:
        """Indexed points in original order."""
        return self._data

    def _query(self, q: NDArray[np.float64], exclude: NDArray[np.int64]):
        q = np.ascontiguousarray(q, dtype=np.float64).reshape(-1, 3)
        return self._kernel.query_nn(
            self._pts, self._perm, self._lo, self._hi, self._dim, self._split,
            self._left, self._right, q, np.ascontiguousarray(exclude, dtype=np.int64),
        )

    def query(self, queries: ArrayLike) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
        """Nearest indexed point for each query row: ``(indices, squared distances)``."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        return self._query(q, np.full(q.shape[0], -1, dtype=np.int64))

    def nearest_other(self) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
        """For every indexed point, its nearest *other* indexed point."""
        if self.n < 2:
            raise ValueError("need at least two points")
        return self._query(self.points, np.arange(self.n, dtype=np.int64))

    def query_radius(self, q: ArrayLike, r: float) -> NDArray[np.int64]:
        """Sorted indices of points with squared distance to ``q`` at most ``r**2``."""
        q = np.asarray(q, dtype=np.float64).reshape(3)
        r2 = float(r) * float(r)
        found = []
        stack = [0]
        while stack:
            node = stack.pop()
            d = self._dim[node]
            if d < 0:
                a, b = self._lo[node], self._hi[node]
                diff = self._pts[a:b] - q
                d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
                found.append(self._perm[a:b][d2 <= r2])
                continue
            diff = q[d] - self._split[node]
            near, far = (self._left[node], self._right[node]) if diff <= 0 else (
                self._right[node], self._left[node])
            stack.append(near)
            if diff * diff <= r2:
                stack.append(far)
        return np.sort(np.concatenate(found)) if found else np.empty(0, dtype=np.int64)


def nearest_neighbor(tree: KdTree, q: ArrayLike) -> tuple[int, float]:
    idx, d2 = tree.query(q)
    return int(idx[0]), float(d2[0])
