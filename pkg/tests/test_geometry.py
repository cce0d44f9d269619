import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from descsynth.geometry import (
    PinholeIntrinsics,
    SE3Pose,
    axis_angle_to_rot,
    check_rotation,
    look_at,
    nearest_rotation,
    project,
    quat_angle,
    quat_to_rot,
    random_rotation,
    rot_to_quat,
    rotation_angle,
    slerp,
)

unit = st.floats(-1, 1, allow_nan=False)
quats = st.tuples(unit, unit, unit, unit).filter(lambda q: np.linalg.norm(q) > 0.1).map(
    lambda q: np.array(q) / np.linalg.norm(q)
)


def test_identity_quaternion():
    np.testing.assert_array_equal(rot_to_quat(np.eye(3)), [1, 0, 0, 0])


def test_half_turns_hit_every_branch():
    # 180 degree turns about each axis force the non-trace branches
    for axis, expect in [((1, 0, 0), [0, 1, 0, 0]), ((0, 1, 0), [0, 0, 1, 0]), ((0, 0, 1), [0, 0, 0, 1])]:
        r = axis_angle_to_rot(np.pi * np.array(axis, float))
        np.testing.assert_allclose(rot_to_quat(r), expect, atol=1e-12)


def test_quaternion_of_known_rotation():
    # 90 degrees about z: q = (cos 45, 0, 0, sin 45)
    r = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    np.testing.assert_allclose(rot_to_quat(r), [np.sqrt(0.5), 0, 0, np.sqrt(0.5)], atol=1e-15)


def test_canonical_sign():
    rng = np.random.default_rng(1)
    for _ in range(200):
        q = rot_to_quat(random_rotation(rng))
        assert q[0] >= 0
        assert abs(np.linalg.norm(q) - 1) < 1e-12


@settings(max_examples=200, deadline=None)
@given(quats)
def test_quaternion_round_trip(q):
    r = quat_to_rot(q)
    check_rotation(r, 1e-10)
    q2 = rot_to_quat(r)
    assert min(np.abs(q2 - q).max(), np.abs(q2 + q).max()) < 1e-9


def test_non_rotation_rejected():
    with pytest.raises(ValueError):
        rot_to_quat(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        rot_to_quat(np.eye(3) * 1.01)
    with pytest.raises(ValueError):
        quat_to_rot([1.0, 0.1, 0, 0])
    with pytest.raises(ValueError):
        SE3Pose(np.ones((3, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        SE3Pose(np.eye(3), [0, np.nan, 0])


@settings(max_examples=100, deadline=None)
@given(quats, quats, st.floats(0, 1))
def test_slerp_constant_speed(qa, qb, d):
    q = slerp(qa, qb, d)
    total = quat_angle(qa, qb)
    assert abs(np.linalg.norm(q) - 1) < 1e-12
    assert abs(quat_angle(qa, q) - d * total) < 1e-6
    assert abs(quat_angle(q, qb) - (1 - d) * total) < 1e-6


def test_slerp_endpoints_and_shortest_arc():
    qa = np.array([1.0, 0, 0, 0])
    qb = -rot_to_quat(axis_angle_to_rot([0, 0, 0.5]))  # opposite sign, same rotation
    assert quat_angle(slerp(qa, qb, 0.0), qa) < 1e-7
    assert quat_angle(slerp(qa, qb, 1.0), qb) < 1e-7
    # the mid rotation is 0.25 rad, not the long way round
    assert abs(rotation_angle(np.eye(3), quat_to_rot(slerp(qa, qb, 0.5))) - np.degrees(0.25)) < 1e-9


def test_slerp_nearly_identical_falls_back():
    qa = np.array([1.0, 0, 0, 0])
    qb = rot_to_quat(axis_angle_to_rot([1e-9, 0, 0]))
    q = slerp(qa, qb, 0.3)
    assert np.all(np.isfinite(q))
    assert abs(np.linalg.norm(q) - 1) < 1e-15


def test_slerp_rejects_bad_delta():
    with pytest.raises(ValueError):
        slerp([1, 0, 0, 0], [1, 0, 0, 0], 1.5)


def test_axis_angle_small_and_large():
    r = axis_angle_to_rot([1e-10, -2e-10, 0])
    check_rotation(r, 1e-14)
    r = axis_angle_to_rot([0, 0, np.pi / 3])
    assert abs(rotation_angle(np.eye(3), r) - 60) < 1e-10


def test_nearest_rotation_recovers_perturbed():
    rng = np.random.default_rng(3)
    r = random_rotation(rng)
    r2 = nearest_rotation(r + 1e-4 * rng.normal(size=(3, 3)))
    check_rotation(r2, 1e-12)
    assert rotation_angle(r, r2) < 0.05


def test_look_at_points_the_optical_axis():
    pose = look_at([3.0, 0, 1], [0, 0, 0])
    xc = pose.transform(np.zeros(3))
    assert xc[0] == pytest.approx(0, abs=1e-12) and xc[1] == pytest.approx(0, abs=1e-12) and xc[2] > 0
    np.testing.assert_allclose(pose.center, [3, 0, 1], atol=1e-12)
    # world up maps to image up (negative v)
    above = pose.transform([0, 0, 0.5])
    assert above[1] < 0
    with pytest.raises(ValueError):
        look_at([0, 0, 5], [0, 0, 0])


def test_project(intr):
    pose = SE3Pose.identity()
    assert project(pose, intr, [0, 0, 2]) == (320.0, 240.0)
    assert project(pose, intr, [1, 0, 2]) == (570.0, 240.0)
    assert project(pose, intr, [0, 0, -1]) is None
    assert project(pose, intr, [10, 0, 1]) is None


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        PinholeIntrinsics(-1, 1, 10, 10, 20, 20)
    with pytest.raises(ValueError):
        PinholeIntrinsics(1, 1, 30, 10, 20, 20)
    k = PinholeIntrinsics(2, 3, 4, 5, 10, 10)
    np.testing.assert_array_equal(k.matrix, [[2, 0, 4], [0, 3, 5], [0, 0, 1]])


def test_pose_is_immutable_and_comparable():
    p = SE3Pose(np.eye(3), [1, 2, 3])
    with pytest.raises(ValueError):
        p.translation[0] = 5
    assert p == SE3Pose(np.eye(3), [1, 2, 3])
    assert p != SE3Pose(np.eye(3), [1, 2, 4])
