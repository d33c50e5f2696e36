"""Compare the compiled kernels with their pure-Python twins.

    python benchmarks/bench_kernels.py [--points N] [--queries M] [--repeat R]

Times the two hot kernels (KD-tree nearest-neighbour queries and the
simplex pivot) on both backends, checks that the outputs are bit-identical
and prints one line per kernel with the speed-up.
"""

from __future__ import annotations

import argparse
import importlib
import sys
import time

import numpy as np

from tcmicp import _kernels_py
from tcmicp.kdtree import KdTree


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_query(compiled, n: int, m: int, repeat: int) -> tuple[float, float, bool]:
    rng = np.random.default_rng(0)
    tree = KdTree(rng.uniform(-10, 10, (n, 3)))
    q = rng.uniform(-10, 10, (m, 3))
    out = {}

    def run(kernel):
        tree._kernel = kernel
        out[kernel.BACKEND] = tree.query(q)

    fast = best_of(lambda: run(compiled), repeat)
    slow = best_of(lambda: run(_kernels_py), max(1, repeat // 3))
    (i1, d1), (i2, d2) = out[compiled.BACKEND], out[_kernels_py.BACKEND]
    return fast, slow, np.array_equal(i1, i2) and d1.tobytes() == d2.tobytes()


def bench_pivot(compiled, rows: int, cols: int, repeat: int) -> tuple[float, float, bool]:
    rng = np.random.default_rng(1)
    base = np.ascontiguousarray(rng.normal(size=(rows, cols)) + 5.0)
    # distinct rows and columns, as in Gauss-Jordan elimination, keep every pivot element non-zero
    steps = [(k, (k * 11) % cols) for k in range(min(rows, 50))]
    out = {}

    def run(kernel):
        t = base.copy()
        for i, j in steps:
            kernel.pivot(t, i, j)
        out[kernel.BACKEND] = t

    fast = best_of(lambda: run(compiled), repeat)
    slow = best_of(lambda: run(_kernels_py), repeat)
    return fast, slow, out[compiled.BACKEND].tobytes() == out[_kernels_py.BACKEND].tobytes()


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--points", type=int, default=20000)
    p.add_argument("--queries", type=int, default=5000)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    try:
        compiled = importlib.import_module("tcmicp._kernels")
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`")
        return 1
    results = [
        (f"query_nn  {args.points} pts x {args.queries} queries",
         bench_query(compiled, args.points, args.queries, args.repeat)),
        ("pivot     50 pivots on a 60 x 600 tableau", bench_pivot(compiled, 60, 600, args.repeat)),
    ]
    for name, (fast, slow, same) in results:
        print(f"{name:45s} compiled {fast * 1e3:9.2f} ms  python {slow * 1e3:9.2f} ms  "
              f"speed-up {slow / fast:6.1f}x  identical={same}")
    return 0 if all(r[2] for _, r in results) else 2


if __name__ == "__main__":
    sys.exit(main())
