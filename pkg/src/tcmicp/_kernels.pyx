# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled nearest-neighbour kernel over a flattened KD-tree.

Must stay bit-compatible with ``_kernels_py.py``: same summation order for
squared distances, same tie rule (lowest original index wins).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

BACKEND = "cython"

DEF STACK = 512


def query_nn(const double[:, ::1] pts, const long long[::1] perm,
             const long long[::1] lo, const long long[::1] hi,
             const long long[::1] dim, const double[::1] split,
             const long long[::1] left, const long long[::1] right,
             const double[:, ::1] queries, const long long[::1] exclude):
    cdef Py_ssize_t m = queries.shape[0]
    out_idx_arr = np.empty(m, dtype=np.int64)
    out_d2_arr = np.empty(m, dtype=np.float64)
    cdef long long[::1] out_idx = out_idx_arr
    cdef double[::1] out_d2 = out_d2_arr
    cdef long long stack_node[STACK]
    cdef double stack_lb[STACK]
    cdef Py_ssize_t i, j, top
    cdef long long node, best_i, skip, pid, near, far
    cdef int d
    cdef double qx, qy, qz, qd, best, lb, dx, dy, dz, d2, diff
    with nogil:
        for i in range(m):
            qx = queries[i, 0]
            qy = queries[i, 1]
            qz = queries[i, 2]
            skip = exclude[i]
            best = INFINITY
            best_i = -1
            top = 0
            stack_node[0] = 0
            stack_lb[0] = 0.0
            top = 1
            while top > 0:
                top -= 1
                node = stack_node[top]
                lb = stack_lb[top]
                if lb > best:
                    continue
                d = <int>dim[node]
                if d < 0:
                    for j in range(lo[node], hi[node]):
                        pid = perm[j]
                        if pid == skip:
                            continue
                        dx = pts[j, 0] - qx
                        dy = pts[j, 1] - qy
                        dz = pts[j, 2] - qz
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 < best or (d2 == best and pid < best_i):
                            best = d2
                            best_i = pid
                    continue
                if d == 0:
                    qd = qx
                elif d == 1:
                    qd = qy
                else:
                    qd = qz
                diff = qd - split[node]
                if diff <= 0:
                    near = left[node]
                    far = right[node]
                else:
                    near = right[node]
                    far = left[node]
                stack_node[top] = far
                stack_lb[top] = diff * diff
                top += 1
                stack_node[top] = near
                stack_lb[top] = lb
                top += 1
            out_idx[i] = best_i
            out_d2[i] = best
    return out_idx_arr, out_d2_arr


def pivot(double[:, ::1] T, Py_ssize_t i, Py_ssize_t j):
    """In-place tableau pivot on (i, j), touching only the nonzero cross-section."""
    cdef Py_ssize_t nr = T.shape[0], nc = T.shape[1]
    cdef Py_ssize_t r, c, k, ncols = 0
    cdef double p = T[i, j], f
    cols_arr = np.empty(nc, dtype=np.intp)
    prow_arr = np.empty(nc, dtype=np.float64)
    cdef Py_ssize_t[::1] cols = cols_arr
    cdef double[::1] prow = prow_arr
    with nogil:
        for c in range(nc):
            if T[i, c] != 0.0:
                cols[ncols] = c
                prow[ncols] = T[i, c] / p
                ncols += 1
        for r in range(nr):
            if r == i:
                continue
            f = T[r, j]
            if f == 0.0:
                continue
            for k in range(ncols):
                T[r, cols[k]] = T[r, cols[k]] - f * prow[k]
        for k in range(ncols):
            T[i, cols[k]] = prow[k]
