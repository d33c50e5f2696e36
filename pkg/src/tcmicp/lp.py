"""Dense tableau simplex and the L1 rigid-fit linear program."""

from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ._backend import kernels as _kernels

PIVOT_TOL = 1e-7
FEAS_TOL = 1e-7
COST_TOL = 1e-9
DEGENERATE_RUN = 50
REFACTOR_EVERY = 100
PERTURB = 1e-9  # relative right-hand-side perturbation against degenerate stalling

RELATIONS = ("<=", ">=", "=")


class DegenerateCorrespondences(ValueError):
    """Too few, or collinear, point pairs to pin down a rigid transform."""


class Status(enum.Enum):
    OPTIMAL = "optimal"
    UNBOUNDED = "unbounded"
    INFEASIBLE = "infeasible"
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class LpProblem:
    """Minimize ``objective @ x`` subject to ``A x (rel) rhs`` row-wise and ``x >= 0``."""

    objective: NDArray[np.float64]
    A: NDArray[np.float64]
    relations: tuple[str, ...]
    rhs: NDArray[np.float64]

    def __post_init__(self) -> None:
        c = np.asarray(self.objective, dtype=np.float64).ravel()
        A = np.asarray(self.A, dtype=np.float64)
        b = np.asarray(self.rhs, dtype=np.float64).ravel()
        rel = tuple(self.relations)
        if A.ndim != 2:
            A = A.reshape(len(b), -1)
        if A.shape != (b.size, c.size) or len(rel) != b.size:
            raise ValueError(
                f"dimension mismatch: A{A.shape}, objective {c.size}, rhs {b.size}, "
                f"relations {len(rel)}"
            )
        if bad := [r for r in rel if r not in RELATIONS]:
            raise ValueError(f"unknown relations {bad}")
        if not (np.isfinite(c).all() and np.isfinite(A).all() and np.isfinite(b).all()):
            raise ValueError("LP coefficients must be finite")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "rhs", b)
        object.__setattr__(self, "relations", rel)

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


@dataclass(frozen=True)
class LpSolution:
    status: Status
    x: NDArray[np.float64]
    objective: float
    iterations: int
    reduced_costs: NDArray[np.float64] | None = None


class _IterationLimit(Exception):
    pass


class _Tableau:
    """Rows ``[B^-1 A | B^-1 b]`` plus a reduced-cost row ``[r | -z]``."""

    def __init__(self, M: NDArray[np.float64], b: NDArray[np.float64], basis: list[int],
                 b_true: NDArray[np.float64] | None = None):
        m, n = M.shape
        self.M0 = M.copy()
        self.b0 = b.copy()
        self.b_true = (b if b_true is None else b_true).copy()
        self.c = np.zeros(n)
        self.T = np.zeros((m + 1, n + 1))
        self.T[:m, :n] = M
        self.T[:m, n] = b
        self.basis = basis
        self.iterations = 0
        self.since_refactor = 0

    @property
    def m(self) -> int:
        return self.T.shape[0] - 1

    def set_costs(self, c: NDArray[np.float64]) -> None:
        self.c = c
        cb = c[self.basis]
        self.T[-1, :-1] = c - cb @ self.T[:-1, :-1]
        self.T[-1, -1] = -(cb @ self.T[:-1, -1])

    def pivot(self, i: int, j: int) -> None:
        _kernels.pivot(self.T, i, j)
        self.basis[i] = j
        self.since_refactor += 1

    def refactor(self) -> None:
        """Rebuild the tableau from the original rows to shed accumulated rounding."""
        if self.since_refactor == 0:
            return
        self.since_refactor = 0
        B = self.M0[:, self.basis]
        try:
            inv_rows = np.linalg.solve(B, np.hstack([self.M0, self.b0[:, None]]))
        except np.linalg.LinAlgError:
            return  # keep the current tableau
        self.T[:-1] = inv_rows
        self.T[:-1, -1] = np.maximum(self.T[:-1, -1], 0.0)
        self.set_costs(self.c)
        self.since_refactor = 0

    def run(self, allowed: NDArray[np.bool_], max_iters: int) -> Status:
        """Pivot to optimality.

        Dantzig's rule (most negative reduced cost) while the objective
        keeps moving; after ``DEGENERATE_RUN`` consecutive degenerate pivots
        switch to Bland's rule (lowest-index entering and leaving variables)
        until a non-degenerate step occurs, which rules out cycling.
        """
        degenerate = 0
        while True:
            if self.since_refactor >= REFACTOR_EVERY:
                self.refactor()
            r = self.T[-1, :-1]
            improving = allowed & (r < -COST_TOL)
            if not improving.any():
                if self.since_refactor:
                    self.refactor()
                    continue
                return Status.OPTIMAL
            if self.iterations >= max_iters:
                raise _IterationLimit
            bland = degenerate >= DEGENERATE_RUN
            if bland:
                j = int(np.flatnonzero(improving)[0])
            else:
                j = int(np.argmin(np.where(improving, r, np.inf)))
            col = self.T[:-1, j]
            pos = np.flatnonzero(col > PIVOT_TOL)
            if pos.size == 0:
                if self.since_refactor:
                    self.refactor()
                    continue
                return Status.UNBOUNDED
            rhs = np.maximum(self.T[pos, -1], 0.0)
            if bland:
                ratios = rhs / col[pos]
                best = ratios.min()
                tied = pos[ratios <= best]
                i = int(min(tied, key=lambda k: self.basis[k]))
            else:
                # Harris: allow a FEAS_TOL overshoot, then take the largest pivot
                limit = ((rhs + FEAS_TOL) / col[pos]).min()
                ok = pos[rhs / col[pos] <= limit]
                i = int(ok[np.argmax(col[ok])])
                best = rhs[np.searchsorted(pos, i)] / col[i]
            degenerate = degenerate + 1 if best <= 1e-12 else 0
            self.pivot(i, j)
            self.iterations += 1

    def drop_row(self, i: int) -> None:
        self.T = np.ascontiguousarray(np.delete(self.T, i, axis=0))
        self.M0 = np.delete(self.M0, i, axis=0)
        self.b0 = np.delete(self.b0, i)
        self.b_true = np.delete(self.b_true, i)
        del self.basis[i]

    def unperturb(self) -> None:
        """Recompute the basic solution from the unperturbed right-hand side."""
        try:
            xb = np.linalg.solve(self.M0[:, self.basis], self.b_true)
        except np.linalg.LinAlgError:
            return
        if xb.min(initial=0.0) < -FEAS_TOL * (1.0 + np.abs(self.b_true).max(initial=0.0)):
            return
        xb = np.maximum(xb, 0.0)
        self.T[:-1, -1] = xb
        self.T[-1, -1] = -(self.c[self.basis] @ xb)

    def drop_columns(self, start: int) -> None:
        self.T = np.ascontiguousarray(np.delete(self.T, np.arange(start, self.T.shape[1] - 1), axis=1))
        self.M0 = self.M0[:, :start]
        self.c = self.c[:start]


def _standard_form(p: LpProblem):
    A = p.A.copy()
    b = p.rhs.copy()
    rel = list(p.relations)
    flip = b < 0
    A[flip] *= -1
    b[flip] *= -1
    swap = {"<=": ">=", ">=": "<=", "=": "="}
    rel = [swap[r] if f else r for r, f in zip(rel, flip)]
    m, n = A.shape
    extra = [i for i, r in enumerate(rel) if r != "="]
    S = np.zeros((m, len(extra)))
    for k, i in enumerate(extra):
        S[i, k] = 1.0 if rel[i] == "<=" else -1.0
    return np.hstack([A, S]), b


def _initial_basis(M: NDArray[np.float64]) -> list[int | None]:
    """Reuse unit-like columns (positive in one row, zero elsewhere) as starting basics."""
    m = M.shape[0]
    basis: list[int | None] = [None] * m
    nz = M != 0.0
    single = np.flatnonzero(nz.sum(axis=0) == 1)
    for j in single:
        i = int(np.flatnonzero(nz[:, j])[0])
        if basis[i] is None and M[i, j] > 0:
            basis[i] = int(j)
    return basis


def solve(p: LpProblem, max_iters: int = 50_000) -> LpSolution:
    """Two-phase dense tableau simplex (Dantzig pricing, Bland fallback on stalling)."""
    M, b = _standard_form(p)
    m, n_std = M.shape
    n = p.objective.size
    basis = _initial_basis(M)
    for i, j in enumerate(basis):
        if j is not None:
            s = M[i, j]
            M[i] /= s
            b[i] /= s
    b_true = b.copy()
    # deterministic, distinct offsets break ties in the ratio test
    golden = np.modf(np.arange(1, m + 1) * 0.6180339887498949)[0]
    b = b + PERTURB * (1.0 + np.abs(b).max(initial=0.0)) * (0.5 + 0.5 * golden)
    need = [i for i, j in enumerate(basis) if j is None]
    n_art = len(need)
    if n_art:
        art = np.zeros((m, n_art))
        for k, i in enumerate(need):
            art[i, k] = 1.0
            basis[i] = n_std + k
        M = np.hstack([M, art])
    tab = _Tableau(M, b, [int(j) for j in basis], b_true)  # type: ignore[arg-type]
    total = n_std + n_art
    is_art = np.zeros(total, dtype=bool)
    is_art[n_std:] = True

    def result(status: Status) -> LpSolution:
        x = np.zeros(total)
        x[tab.basis] = tab.T[:-1, -1]
        xs = np.maximum(x[:n], 0.0)
        return LpSolution(status, xs, float(p.objective @ xs), tab.iterations)

    try:
        if n_art:
            tab.set_costs(is_art.astype(float))
            tab.run(~np.zeros(total, dtype=bool), max_iters)
            scale = max(1.0, float(np.abs(b).max(initial=0.0)))
            if -tab.T[-1, -1] > FEAS_TOL * scale:
                return LpSolution(Status.INFEASIBLE, np.zeros(n), float("nan"), tab.iterations)
            for i in reversed(range(tab.m)):
                if not is_art[tab.basis[i]]:
                    continue
                row = tab.T[i, :n_std]
                cand = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                if cand.size:
                    tab.pivot(i, int(cand[np.argmax(np.abs(row[cand]))]))
                else:
                    tab.drop_row(i)  # redundant constraint
            tab.drop_columns(n_std)
            total = n_std
        c = np.zeros(total)
        c[:n] = p.objective
        tab.set_costs(c)
        status = tab.run(np.ones(total, dtype=bool), max_iters)
    except _IterationLimit:
        return result(Status.ITERATION_LIMIT)
    if status is Status.UNBOUNDED:
        return LpSolution(status, np.zeros(n), float("-inf"), tab.iterations)
    tab.unperturb()
    sol = result(status)
    return LpSolution(sol.status, sol.x, sol.objective, sol.iterations, tab.T[-1, :-1].copy())


# -- rigid fit ---------------------------------------------------------------

def skew(v: ArrayLike) -> NDArray[np.float64]:
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def omega_to_rotation(omega: ArrayLike) -> NDArray[np.float64]:
    """Rodrigues formula: rotation by angle ``|omega|`` about ``omega``."""
    w = np.asarray(omega, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(w))
    if theta == 0.0:
        return np.eye(3)
    K = skew(w / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def rotations_from_vectors(omegas: ArrayLike) -> NDArray[np.float64]:
    """Vectorized :func:`omega_to_rotation` over the rows of a (k, 3) array."""
    omegas = np.atleast_2d(np.asarray(omegas, dtype=np.float64))
    theta = np.linalg.norm(omegas, axis=1)
    safe = np.where(theta > 0, theta, 1.0)
    k = omegas / safe[:, None]
    K = np.zeros((len(omegas), 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -k[:, 2], k[:, 1]
    K[:, 1, 0], K[:, 1, 2] = k[:, 2], -k[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -k[:, 1], k[:, 0]
    s = np.sin(theta)[:, None, None]
    c = (1.0 - np.cos(theta))[:, None, None]
    R = np.eye(3)[None] + s * K + c * (K @ K)
    R[theta == 0] = np.eye(3)
    return R


def _check_pairs(sources: NDArray[np.float64], targets: NDArray[np.float64]) -> None:
    if sources.shape != targets.shape or sources.ndim != 2 or sources.shape[1] != 3:
        raise ValueError("sources and targets must both be (k, 3)")
    if sources.shape[0] < 3:
        raise DegenerateCorrespondences(f"need >= 3 pairs, got {sources.shape[0]}")
    if np.linalg.matrix_rank(sources - sources.mean(axis=0)) < 2:
        raise DegenerateCorrespondences("source points are collinear")


def build_rigid_fit_lp(
    pairs: Sequence[tuple[ArrayLike, ArrayLike]] | None = None,
    *,
    sources: ArrayLike | None = None,
    targets: ArrayLike | None = None,
) -> LpProblem:
    """L1 fit of a small-angle rigid motion to point pairs.

    Model: ``target = source + omega x source + t + e``. Each residual
    coordinate ``e`` is split as ``u_plus - u_minus``, so a positive ``u_plus``
    means the target lies beyond the model, ``u_minus`` the reverse, and both
    zero an exact match. Minimizes ``sum(u_plus + u_minus)``.

    Variable layout: ``omega+ (3), omega- (3), t+ (3), t- (3), u+ (3k), u- (3k)``.
    """
    if pairs is not None:
        arr = np.asarray([(np.asarray(s, float), np.asarray(t, float)) for s, t in pairs])
        src, tgt = arr[:, 0, :], arr[:, 1, :]
    else:
        src = np.asarray(sources, dtype=np.float64)
        tgt = np.asarray(targets, dtype=np.float64)
    _check_pairs(src, tgt)
    k = src.shape[0]
    rows = 3 * k
    A = np.zeros((rows, 12 + 2 * rows))
    sx, sy, sz = src[:, 0], src[:, 1], src[:, 2]
    # omega x s, row by row: x: [0, sz, -sy]; y: [-sz, 0, sx]; z: [sy, -sx, 0]
    W = np.zeros((k, 3, 3))
    W[:, 0, 1], W[:, 0, 2] = sz, -sy
    W[:, 1, 0], W[:, 1, 2] = -sz, sx
    W[:, 2, 0], W[:, 2, 1] = sy, -sx
    W = W.reshape(rows, 3)
    A[:, 0:3] = W
    A[:, 3:6] = -W
    eye = np.tile(np.eye(3), (k, 1))
    A[:, 6:9] = eye
    A[:, 9:12] = -eye
    A[:, 12:12 + rows] = np.eye(rows)
    A[:, 12 + rows:] = -np.eye(rows)
    c = np.zeros(A.shape[1])
    c[12:] = 1.0
    d = (tgt - src).reshape(rows)
    return LpProblem(c, A, ("=",) * rows, d)


def unpack_rigid_fit(x: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """``(omega, t)`` from a solution vector of :func:`build_rigid_fit_lp`."""
    x = np.asarray(x, dtype=np.float64)
    return x[0:3] - x[3:6], x[6:9] - x[9:12]
