import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import assert_rigid, random_cloud
from tcmicp.geometry import (
    Aabb,
    GeometryError,
    PointCloud,
    RigidTransform,
    apply_transform,
    closest_pair_sq,
    compose,
    is_rotation,
    rot_x,
    rot_z,
    transform_error,
)
from tcmicp.lp import omega_to_rotation, rotations_from_vectors

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite)


def test_cloud_validation():
    with pytest.raises(GeometryError):
        PointCloud(np.empty((0, 3)))
    with pytest.raises(GeometryError):
        PointCloud([[0.0, 0.0]])
    with pytest.raises(GeometryError):
        PointCloud([[0.0, np.nan, 1.0]])
    c = PointCloud([1.0, 2.0, 3.0])
    assert len(c) == 1
    assert c.points.flags.writeable is False


def test_cloud_is_a_copy():
    raw = np.zeros((2, 3))
    c = PointCloud(raw)
    raw[0, 0] = 5.0
    assert c.points[0, 0] == 0.0


def test_aabb():
    box = PointCloud([[0, 0, 0], [3, 4, 12]]).aabb()
    assert box.diagonal == 13.0
    np.testing.assert_array_equal(box.center, [1.5, 2, 6])
    assert box.contains([[1, 1, 1], [4, 0, 0]]).tolist() == [True, False]
    big = box.scaled(2.0)
    np.testing.assert_allclose(big.extent, 2 * box.extent)
    u = Aabb.union([box, Aabb(np.array([-1, -1, -1.0]), np.zeros(3))])
    np.testing.assert_array_equal(u.min, [-1, -1, -1])
    with pytest.raises(GeometryError):
        Aabb(np.ones(3), np.zeros(3))


def test_transform_rejects_non_rotations():
    with pytest.raises(GeometryError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))  # reflection
    with pytest.raises(GeometryError):
        RigidTransform(np.eye(3) * 1.001)
    with pytest.raises(GeometryError):
        RigidTransform(np.eye(3), np.array([0.0, np.inf, 0.0]))


def test_compose_applies_right_first():
    a = RigidTransform(rot_z(0.3), np.array([1.0, 0, 0]))
    b = RigidTransform(rot_x(-0.2), np.array([0, 2.0, 0]))
    p = np.array([[0.5, -1.0, 2.0]])
    np.testing.assert_allclose(compose(a, b).apply(p), a.apply(b.apply(p)), atol=1e-12)
    np.testing.assert_allclose((a @ b).apply(p), a.apply(b.apply(p)), atol=1e-12)


def test_rotation_angle_addition():
    t = compose(RigidTransform(rot_z(np.radians(30))), RigidTransform(rot_z(np.radians(60))))
    np.testing.assert_allclose(t.rotation, rot_z(np.pi / 2), atol=1e-15)


def test_transform_error():
    t = RigidTransform(rot_z(0.1), np.array([3.0, 4.0, 0.0]))
    ang, dist = transform_error(t, RigidTransform.identity())
    assert ang == pytest.approx(0.1)
    assert dist == pytest.approx(5.0)


def test_apply_transform_keeps_id():
    c = random_cloud(10, id="scan")
    out = apply_transform(c, RigidTransform(rot_z(1.0)))
    assert out.id == "scan"
    np.testing.assert_allclose(np.linalg.norm(out.points, axis=1), np.linalg.norm(c.points, axis=1))


def test_closest_pair():
    assert closest_pair_sq(PointCloud([[0, 0, 0], [1, 0, 0], [5, 0, 0]])) == 1.0
    assert closest_pair_sq(PointCloud([[1, 2, 3], [0, 0, 0], [1, 2, 3]])) == 0.0
    c = PointCloud([[0, 0, 0], [5, 0, 0], [5, 0.5, 0], [9, 9, 9]])
    assert closest_pair_sq(c) == 0.25
    with pytest.raises(GeometryError):
        closest_pair_sq(PointCloud([[0, 0, 0]]))


def test_closest_pair_brute_force():
    c = random_cloud(150, seed=3)
    d = ((c.points[:, None] - c.points[None]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    assert closest_pair_sq(c) == d.min()


@settings(max_examples=200, deadline=None)
@given(vec3)
def test_rodrigues_is_a_rotation(w):
    r = omega_to_rotation(np.array(w))
    assert is_rotation(r)
    assert_rigid(RigidTransform(r))


@settings(max_examples=50, deadline=None)
@given(st.lists(vec3, min_size=1, max_size=8))
def test_batched_rodrigues_matches_single(ws):
    ws = np.array(ws)
    batch = rotations_from_vectors(ws)
    for w, r in zip(ws, batch):
        np.testing.assert_allclose(r, omega_to_rotation(w), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(vec3, vec3)
def test_inverse_round_trip(w, t):
    x = RigidTransform(omega_to_rotation(np.array(w)), np.array(t))
    both = compose(x, x.inverse())
    np.testing.assert_allclose(both.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(both.translation, 0.0, atol=1e-12)
    assert_rigid(x.inverse())


def test_as_row_layout():
    t = RigidTransform(rot_z(0.5), np.array([1.0, 2.0, 3.0]))
    row = t.as_row()
    assert len(row) == 12
    np.testing.assert_array_equal(np.reshape(row[:9], (3, 3)), t.rotation)
    assert row[9:] == [1.0, 2.0, 3.0]
