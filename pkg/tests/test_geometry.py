import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relocgeo.errors import BehindCameraError, InvalidInputError
from relocgeo.geometry import (
    CameraIntrinsics,
    Pose,
    backproject,
    compose,
    direction_angle_deg,
    essential_from_pose,
    invert,
    project,
    quaternion_to_rotation,
    relative_pose,
    rotation_about,
    rotation_angle_deg,
    rotation_to_quaternion,
)

finite = st.floats(-10, 10, allow_nan=False)
quats = arrays(np.float64, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 0.1)
vec3 = arrays(np.float64, 3, elements=finite)

K = CameraIntrinsics(100.0, 110.0, 64.0, 48.0, 128, 96)


def random_pose(q, t):
    return Pose(quaternion_to_rotation(q), t)


@given(quats)
def test_quaternion_round_trip(q):
    r = quaternion_to_rotation(q)
    back = rotation_to_quaternion(r)
    assert back[0] >= 0
    q = q / np.linalg.norm(q)
    # q and -q are the same rotation
    assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-9


@given(quats, vec3, quats, vec3)
def test_compose_invert(q1, t1, q2, t2):
    a, b = random_pose(q1, t1), random_pose(q2, t2)
    ident = compose(a, invert(a))
    assert np.allclose(ident.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(ident.translation, 0, atol=1e-9)
    p = np.array([0.3, -1.2, 4.0])
    assert np.allclose(compose(a, b).apply(p), a.apply(b.apply(p)), atol=1e-9)


def test_relative_pose_maps_reference_to_query():
    ref = Pose(rotation_about([0, 1, 0], 20), [0.5, 0, 1])
    qry = Pose(rotation_about([1, 0, 0], -5), [-0.2, 0.1, 0.3])
    world = np.array([1.0, 2.0, 5.0])
    rel = relative_pose(ref, qry)
    assert np.allclose(rel.apply(ref.apply(world)), qry.apply(world))


def test_pose_arrays_are_read_only():
    p = Pose()
    with pytest.raises(ValueError):
        p.translation[0] = 1.0


def test_pose_rejects_non_rotation():
    with pytest.raises(InvalidInputError):
        Pose(np.diag([1.0, 1.0, -1.0]))


@given(st.floats(0, 127.9), st.floats(0, 95.9), st.floats(0.1, 100))
def test_backproject_project_round_trip(u, v, d):
    p = backproject(K, (u, v), d)
    assert p[2] == pytest.approx(d)
    assert np.allclose(project(K, p), (u, v), atol=1e-9)


def test_backproject_errors():
    with pytest.raises(InvalidInputError):
        backproject(K, (1, 1), 0.0)
    with pytest.raises(InvalidInputError):
        backproject(K, (128, 1), 1.0)
    with pytest.raises(BehindCameraError):
        project(K, [0, 0, -1])


def test_intrinsics_validation():
    with pytest.raises(InvalidInputError):
        CameraIntrinsics(0, 1, 0, 0, 4, 4)
    with pytest.raises(InvalidInputError):
        CameraIntrinsics(1, 1, 5, 0, 4, 4)
    assert K.diagonal == pytest.approx(160.0)
    assert np.allclose(K.K @ K.K_inv, np.eye(3))


def test_angles():
    assert rotation_angle_deg(rotation_about([0, 0, 1], 30), np.eye(3)) == pytest.approx(30)
    assert rotation_angle_deg(np.eye(3), np.eye(3)) == 0.0
    assert direction_angle_deg([1, 0, 0], [0, 2, 0]) == pytest.approx(90)


@given(quats, vec3.filter(lambda t: np.linalg.norm(t) > 1e-3))
def test_essential_annihilates_correspondences(q, t):
    r = quaternion_to_rotation(q)
    e = essential_from_pose(r, t)
    x1 = np.array([0.1, -0.2, 1.0]) * 3.0
    x2 = r @ x1 + t
    assert abs(x2 @ e @ x1) < 1e-9 * max(1.0, np.linalg.norm(t))
