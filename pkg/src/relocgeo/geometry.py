"""Camera, pose and projection primitives.

Poses map source coordinates to target coordinates, ``p_target = R @ p_source + t``.
A frame's stored pose maps world to camera; the relative pose of a query with
respect to its reference is ``compose(pose_query, invert(pose_ref))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation as _Rot

from .errors import BehindCameraError, InvalidInputError

ORTHO_TOL = 1e-9


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidInputError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))


@dataclass(frozen=True)
class CanonicalCameraConfig:
    fc: float
    uc: float = 0.0
    vc: float = 0.0

    def __post_init__(self):
        if not self.fc > 0:
            raise InvalidInputError(f"canonical focal must be positive, got {self.fc}")


def check_rotation(r, tol: float = ORTHO_TOL) -> np.ndarray:
    """Validate a 3x3 rotation matrix and return it as float64."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise InvalidInputError(f"rotation must be 3x3, got {r.shape}")
    if np.abs(r @ r.T - np.eye(3)).max() > tol or abs(np.linalg.det(r) - 1.0) > tol:
        raise InvalidInputError("matrix is not a proper rotation")
    return r


def check_unit(t, tol: float = 1e-12) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(t) - 1.0) > tol:
        raise InvalidInputError(f"translation direction must have unit norm, got {np.linalg.norm(t)}")
    return t


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(check_rotation(self.rotation)))
        object.__setattr__(self, "translation", _frozen(np.asarray(self.translation).reshape(3)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_quaternion(cls, q, t) -> "Pose":
        return cls(quaternion_to_rotation(q), t)

    def quaternion(self) -> np.ndarray:
        return rotation_to_quaternion(self.rotation)

    def apply(self, points) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying ``b`` first, then ``a``."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def relative_pose(pose_ref: Pose, pose_query: Pose) -> Pose:
    """Map from reference-camera to query-camera coordinates."""
    return compose(pose_query, invert(pose_ref))


def quaternion_to_rotation(q) -> np.ndarray:
    """(w, x, y, z) quaternion, normalized on the way in, to a rotation matrix."""
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.linalg.norm(q)
    if not n > 0:
        raise InvalidInputError("zero quaternion")
    w, x, y, z = q / n
    return _Rot.from_quat([x, y, z, w]).as_matrix()


def rotation_to_quaternion(r) -> np.ndarray:
    """Rotation matrix to (w, x, y, z) with w >= 0."""
    x, y, z, w = _Rot.from_matrix(np.asarray(r, dtype=np.float64)).as_quat()
    q = np.array([w, x, y, z])
    return -q if w < 0 else q


def rotation_about(axis, angle_deg: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return _Rot.from_rotvec(axis * np.deg2rad(angle_deg)).as_matrix()


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def backproject(k: CameraIntrinsics, pixel, depth: float) -> np.ndarray:
    """Lift pixel ``(u, v)`` at metric ``depth`` to a camera-frame point."""
    if not depth > 0:
        raise InvalidInputError(f"depth must be positive, got {depth}")
    u, v = np.asarray(pixel, dtype=np.float64).reshape(2)
    if not (0 <= u < k.width and 0 <= v < k.height):
        raise InvalidInputError(f"pixel ({u}, {v}) outside image")
    return depth * np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])


def project(k: CameraIntrinsics, point) -> np.ndarray:
    x, y, z = np.asarray(point, dtype=np.float64).reshape(3)
    if not z > 0:
        raise BehindCameraError(f"point has non-positive depth {z}")
    return np.array([k.fx * x / z + k.cx, k.fy * y / z + k.cy])


def rotation_angle_deg(a, b) -> float:
    """Geodesic angle between two rotations, in degrees.

    atan2 of sine and cosine parts stays accurate near zero, where the usual
    arccos of the trace loses about eight digits.
    """
    m = np.asarray(a) @ np.asarray(b).T
    s = 0.5 * np.linalg.norm([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    c = 0.5 * (np.trace(m) - 1.0)
    return float(np.degrees(np.arctan2(s, c)))


def direction_angle_deg(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(a, b)), a @ b)))


def essential_from_pose(r, t) -> np.ndarray:
    """E = [t]x R, so that x2^T E x1 = 0 for x2 ~ R x1 + t."""
    return skew(t) @ np.asarray(r, dtype=np.float64)
