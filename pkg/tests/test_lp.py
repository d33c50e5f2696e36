import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from tcmicp.geometry import rot_z
from tcmicp.lp import (
    DegenerateCorrespondences,
    LpProblem,
    Status,
    build_rigid_fit_lp,
    omega_to_rotation,
    skew,
    solve,
    unpack_rigid_fit,
)
from tcmicp.register import best_fit_transform


def test_classic_example():
    p = LpProblem([-3, -5], [[1, 0], [0, 2], [3, 2]], ("<=",) * 3, [4, 12, 18])
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(-36.0, abs=1e-9)
    np.testing.assert_allclose(sol.x, [2, 6], atol=1e-9)
    assert oracles.lp_vertex_optimum([-3, -5], np.array([[1, 0], [0, 2], [3, 2.0]]),
                                     np.array([4, 12, 18.0]))[0] == pytest.approx(-36.0)


def test_single_lower_bound():
    sol = solve(LpProblem([1], [[1]], (">=",), [5]))
    assert sol.status is Status.OPTIMAL
    assert sol.x[0] == pytest.approx(5.0)


def test_infeasible():
    assert solve(LpProblem([1], [[1]], ("<=",), [-1])).status is Status.INFEASIBLE
    p = LpProblem([1, 1], [[1, 1], [1, 1]], ("<=", ">="), [1, 2])
    assert solve(p).status is Status.INFEASIBLE


def test_unbounded():
    sol = solve(LpProblem([-1, 0], [[1, -1]], ("<=",), [1]))
    assert sol.status is Status.UNBOUNDED


def test_equality_and_redundant_rows():
    # x + y = 2 twice (redundant), minimize x - y -> x=0, y=2
    p = LpProblem([1, -1], [[1, 1], [1, 1], [1, 0]], ("=", "=", "<="), [2, 2, 5])
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    np.testing.assert_allclose(sol.x, [0, 2], atol=1e-9)


def test_negative_rhs_rows_are_normalized():
    # -x <= -3  is  x >= 3
    sol = solve(LpProblem([1], [[-1]], ("<=",), [-3]))
    assert sol.x[0] == pytest.approx(3.0)


def test_iteration_limit():
    p = LpProblem([-3, -5], [[1, 0], [0, 2], [3, 2]], ("<=",) * 3, [4, 12, 18])
    assert solve(p, max_iters=1).status is Status.ITERATION_LIMIT


def test_dimension_errors():
    with pytest.raises(ValueError):
        LpProblem([1, 2], [[1, 2, 3]], ("<=",), [1])
    with pytest.raises(ValueError):
        LpProblem([1], [[1]], ("<",), [1])
    with pytest.raises(ValueError):
        LpProblem([np.nan], [[1]], ("<=",), [1])


def test_degenerate_vertex():
    # three constraints meet at (1, 1): a classic degenerate corner
    p = LpProblem([-1, -1], [[1, 0], [0, 1], [1, 1]], ("<=",) * 3, [1, 1, 2])
    sol = solve(p)
    assert sol.objective == pytest.approx(-2.0)


def random_bounded_lp(rng):
    n = int(rng.integers(1, 7))
    m = int(rng.integers(1, 8))  # plus one bounding row below: at most 8 constraints
    A = rng.uniform(-1, 2, (m, n))
    b = rng.uniform(0.5, 5, m)
    A = np.vstack([A, np.ones(n)])  # sum(x) <= B keeps the region bounded
    b = np.append(b, rng.uniform(2, 10))
    c = rng.normal(size=n)
    return c, A, b


def check_against_vertices(c, A, b):
    sol = solve(LpProblem(c, A, ("<=",) * len(b), b))
    ref = oracles.lp_vertex_optimum(c, A, b)
    assert ref is not None  # the origin is always feasible here
    assert sol.status is Status.OPTIMAL
    assert abs(sol.objective - ref[0]) <= 1e-7
    assert np.all(A @ sol.x <= b + 1e-7) and np.all(sol.x >= -1e-12)
    assert np.all(sol.reduced_costs >= -1e-9)


def test_random_lps_match_vertex_enumeration():
    rng = np.random.default_rng(2024)
    for _ in range(60):
        check_against_vertices(*random_bounded_lp(rng))


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_property_vertex_enumeration(seed):
    check_against_vertices(*random_bounded_lp(np.random.default_rng(seed)))


def test_weak_duality_spot_check():
    rng = np.random.default_rng(5)
    c, A, b = random_bounded_lp(rng)
    sol = solve(LpProblem(c, A, ("<=",) * len(b), b))
    x = rng.uniform(0, 1, (20000, len(c))) ** 3 * 2.0  # skewed towards the origin, which is feasible
    feasible = x[np.all(x @ A.T <= b, axis=1)]
    assert len(feasible) > 0
    assert np.all(feasible @ c >= sol.objective - 1e-9)


def test_mixed_relations_against_enumeration():
    rng = np.random.default_rng(77)
    for _ in range(30):
        c, A, b = random_bounded_lp(rng)
        # turn the first row into a >= row that the origin violates but the box allows
        A2, b2 = A.copy(), b.copy()
        A2[0] = np.abs(A2[0]) + 0.1
        b2[0] = 0.3
        rel = (">=",) + ("<=",) * (len(b) - 1)
        sol = solve(LpProblem(c, A2, rel, b2))
        G = np.vstack([-A2[:1], A2[1:]])
        h = np.concatenate([-b2[:1], b2[1:]])
        ref = oracles.lp_vertex_optimum(c, G, h)
        if ref is None:
            assert sol.status is Status.INFEASIBLE
        else:
            assert sol.status is Status.OPTIMAL
            assert sol.objective == pytest.approx(ref[0], abs=1e-7)


# -- rigid fit ---------------------------------------------------------------

CUBE4 = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])


def fit(src, tgt):
    sol = solve(build_rigid_fit_lp(sources=src, targets=tgt))
    assert sol.status is Status.OPTIMAL
    return (*unpack_rigid_fit(sol.x), sol.objective)


def test_pure_translation():
    t = np.array([0.3, -0.1, 0.2])
    w, tt, obj = fit(CUBE4, CUBE4 + t)
    np.testing.assert_allclose(w, 0.0, atol=1e-9)
    np.testing.assert_allclose(tt, t, atol=1e-9)
    assert obj == pytest.approx(0.0, abs=1e-9)


def test_identity_pairs():
    w, t, obj = fit(CUBE4, CUBE4)
    assert np.abs(w).max() <= 1e-12 and np.abs(t).max() <= 1e-12 and obj <= 1e-12


def test_small_rotation_close_to_svd():
    theta = np.radians(2.0)
    cube = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)[:4]
    tgt = cube @ rot_z(theta).T
    w, t, _ = fit(cube, tgt)
    assert abs(w[2] - theta) <= 1e-3
    svd = best_fit_transform(cube, tgt)
    assert abs(svd.rotation_angle() - theta) <= 1e-12


def test_pairs_argument_form():
    p = build_rigid_fit_lp([(s, s + 1.0) for s in CUBE4])
    sol = solve(p)
    np.testing.assert_allclose(unpack_rigid_fit(sol.x)[1], 1.0, atol=1e-9)


def test_objective_at_truth_within_linearization_bound():
    rng = np.random.default_rng(3)
    src = rng.normal(size=(30, 3))
    w = np.array([0.01, -0.02, 0.015])
    tgt = src @ omega_to_rotation(w).T
    p = build_rigid_fit_lp(sources=src, targets=tgt)
    x = np.zeros(p.A.shape[1])
    x[0:3], x[3:6] = np.maximum(w, 0), np.maximum(-w, 0)
    e = p.rhs - p.A[:, :12] @ x[:12]
    k = len(src)
    x[12:12 + 3 * k], x[12 + 3 * k:] = np.maximum(e, 0), np.maximum(-e, 0)
    bound = np.sum(np.linalg.norm(w) ** 2 * np.sum(src**2, axis=1) / 2) * 3
    assert p.objective @ x <= bound
    assert solve(p).objective <= p.objective @ x + 1e-9


def test_degenerate_pairs():
    with pytest.raises(DegenerateCorrespondences):
        build_rigid_fit_lp(sources=CUBE4[:2], targets=CUBE4[:2])
    line = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0.0]])
    with pytest.raises(DegenerateCorrespondences):
        build_rigid_fit_lp(sources=line, targets=line)


def test_l1_ignores_a_gross_outlier():
    rng = np.random.default_rng(8)
    src = rng.normal(size=(40, 3))
    tgt = src + [0.5, 0.0, -0.25]
    tgt[3] += [30.0, -40.0, 10.0]
    w, t, _ = fit(src, tgt)
    np.testing.assert_allclose(t, [0.5, 0.0, -0.25], atol=1e-7)


def test_rodrigues_examples():
    np.testing.assert_array_equal(omega_to_rotation([0, 0, 0]), np.eye(3))
    np.testing.assert_allclose(omega_to_rotation([0, 0, np.pi / 2]), rot_z(np.pi / 2), atol=1e-15)
    rng = np.random.default_rng(0)
    for _ in range(100):
        w = rng.normal(size=3)
        w *= rng.uniform(0, 0.1) / np.linalg.norm(w)
        err = np.linalg.norm(omega_to_rotation(w) - (np.eye(3) + skew(w)))
        assert err <= np.linalg.norm(w) ** 2
