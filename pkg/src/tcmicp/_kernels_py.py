"""Pure-Python nearest-neighbour kernel.

Mirrors ``_kernels.pyx`` line for line so that both backends return
bit-identical results. Used when the compiled extension is unavailable or
``TCMICP_PURE_PYTHON`` is set.
"""

import numpy as np

BACKEND = "python"


def query_nn(pts, perm, lo, hi, dim, split, left, right, queries, exclude):
    m = queries.shape[0]
    out_idx = np.empty(m, dtype=np.int64)
    out_d2 = np.empty(m, dtype=np.float64)
    for i in range(m):
        qx, qy, qz = float(queries[i, 0]), float(queries[i, 1]), float(queries[i, 2])
        q = queries[i]
        skip = int(exclude[i])
        best = np.inf
        best_i = -1
        stack = [(0, 0.0)]
        while stack:
            node, lb = stack.pop()
            if lb > best:
                continue
            d = dim[node]
            if d < 0:
                a, b = lo[node], hi[node]
                diff = pts[a:b] - q
                d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
                ids = perm[a:b]
                if skip >= 0:
                    d2 = np.where(ids == skip, np.inf, d2)
                k = d2.min()
                if k < best:
                    best = float(k)
                    best_i = int(ids[d2 == k].min())
                elif k == best and k != np.inf:
                    cand = int(ids[d2 == k].min())
                    if cand < best_i:
                        best_i = cand
                continue
            qd = (qx, qy, qz)[d]
            diff = qd - split[node]
            if diff <= 0:
                near, far = left[node], right[node]
            else:
                near, far = right[node], left[node]
            stack.append((far, diff * diff))
            stack.append((near, lb))
        out_idx[i] = best_i
        out_d2[i] = best
    return out_idx, out_d2


def pivot(T, i, j):
    """In-place tableau pivot on (i, j), touching only the nonzero cross-section."""
    cols = np.flatnonzero(T[i])
    rows = np.flatnonzero(T[:, j])
    rows = rows[rows != i]
    prow = T[i, cols] / T[i, j]
    T[np.ix_(rows, cols)] -= np.outer(T[rows, j], prow)
    T[i, cols] = prow
