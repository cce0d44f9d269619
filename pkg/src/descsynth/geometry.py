"""Rotation, quaternion and pose algebra plus pinhole projection.

Conventions used throughout the package:

* rotations are 3x3 ``float64`` arrays, camera-from-world;
* quaternions are ``(w, x, y, z)`` arrays with the canonical sign ``w >= 0``;
* a world point ``X`` maps to camera coordinates as ``R @ X + t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-6
UNIT_TOL = 1e-6
SLERP_LERP_EPS = 1e-6


@dataclass(frozen=True)
class PinholeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie strictly inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def as_tuple(self):
        return (self.fx, self.fy, self.cx, self.cy, self.width, self.height)


@dataclass(frozen=True, eq=False)
class SE3Pose:
    """Camera-from-world extrinsics."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        check_rotation(r)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SE3Pose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, ``-R^T t``."""
        return -self.rotation.T @ self.translation

    def transform(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, SE3Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __repr__(self):
        return f"SE3Pose(q={rot_to_quat(self.rotation).round(6).tolist()}, t={self.translation.round(6).tolist()})"


def check_rotation(r: np.ndarray, tol: float = ORTHO_TOL) -> None:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    resid = np.abs(r.T @ r - np.eye(3)).max()
    if resid > tol:
        raise ValueError(f"rotation not orthonormal (residual {resid:.3g})")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("rotation determinant is not +1")


def _canonical(q: np.ndarray) -> np.ndarray:
    # w >= 0; for w == 0 the first non-zero vector component is made positive
    for c in q:
        if c != 0.0:
            return q if c > 0 else -q
    return q


def rot_to_quat(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion ``(w, x, y, z)``.

    Uses the branch on the largest of ``trace, r11, r22, r33`` so the
    divisor never gets close to zero.
    """
    r = np.asarray(r, dtype=np.float64)
    check_rotation(r)
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    branch = int(np.argmax([tr, r[0, 0], r[1, 1], r[2, 2]]))
    if branch == 0:
        w = 0.5 * np.sqrt(1.0 + tr)
        s = 4.0 * w
        q = np.array([w, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    elif branch == 1:
        x = 0.5 * np.sqrt(max(1.0 + r[0, 0] - r[1, 1] - r[2, 2], 0.0))
        s = 4.0 * x
        q = np.array([(r[2, 1] - r[1, 2]) / s, x, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
    elif branch == 2:
        y = 0.5 * np.sqrt(max(1.0 - r[0, 0] + r[1, 1] - r[2, 2], 0.0))
        s = 4.0 * y
        q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, y, (r[1, 2] + r[2, 1]) / s])
    else:
        z = 0.5 * np.sqrt(max(1.0 - r[0, 0] - r[1, 1] + r[2, 2], 0.0))
        s = 4.0 * z
        q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, z])
    q /= np.linalg.norm(q)
    return _canonical(q)


def _check_unit(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(4)
    if not np.all(np.isfinite(q)) or abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
        raise ValueError(f"quaternion is not unit norm: {q}")
    return q


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = _check_unit(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def slerp(qa: np.ndarray, qb: np.ndarray, delta: float) -> np.ndarray:
    """Constant-angular-speed interpolation from ``qa`` (delta=0) to ``qb`` (delta=1).

    ``qb`` is sign-flipped when needed so the shorter arc is taken. Falls back
    to normalized linear interpolation when the arc is numerically flat.
    """
    qa = _check_unit(qa)
    qb = _check_unit(qb)
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must be in [0, 1], got {delta}")
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    omega = np.arccos(min(dot, 1.0))
    so = np.sin(omega)
    if so < SLERP_LERP_EPS:
        q = (1.0 - delta) * qa + delta * qb
    else:
        q = (np.sin((1.0 - delta) * omega) * qa + np.sin(delta * omega) * qb) / so
    return _canonical(q / np.linalg.norm(q))


def quat_angle(qa: np.ndarray, qb: np.ndarray) -> float:
    """Rotation angle in radians between the rotations represented by two quaternions."""
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    if np.dot(qa, qb) < 0:
        qb = -qb
    # atan2 form stays accurate near 0 where arccos(dot) loses half the digits
    return float(4.0 * np.arctan2(np.linalg.norm(qa - qb), np.linalg.norm(qa + qb)))


def rotation_angle(ra: np.ndarray, rb: np.ndarray) -> float:
    """Angle in degrees of the relative rotation ``ra^T rb``."""
    r = np.asarray(ra, dtype=np.float64).T @ np.asarray(rb, dtype=np.float64)
    c = (np.trace(r) - 1.0) / 2.0
    s = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return float(np.degrees(np.arctan2(s, c)))


def axis_angle_to_rot(v: np.ndarray) -> np.ndarray:
    """Rodrigues formula; ``v`` is axis times angle in radians."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v)
    k = skew(v)
    if theta < 1e-8:
        # second-order series keeps the result orthonormal to ~1e-16
        r = np.eye(3) + k + 0.5 * k @ k
        u, _, vt = np.linalg.svd(r)
        return u @ vt
    k = k / theta
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Closest rotation in Frobenius norm (polar factor with det fixed to +1)."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, np.pi)
    return axis_angle_to_rot(axis * angle)


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> SE3Pose:
    """Pose of a camera at ``center`` whose optical axis (+z) points at ``target``.

    Image x runs right and image y runs down, so camera -y follows ``up``.
    """
    center = np.asarray(center, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - center
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("viewing direction is parallel to the up vector")
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd])
    return SE3Pose(r, -r @ center)


def project(pose: SE3Pose, k: PinholeIntrinsics, point) -> tuple[float, float] | None:
    """Pixel coordinates of one world point, or ``None`` when out of view."""
    xc = pose.rotation @ np.asarray(point, dtype=np.float64) + pose.translation
    if not xc[2] > 0:
        return None
    u = k.fx * xc[0] / xc[2] + k.cx
    v = k.fy * xc[1] / xc[2] + k.cy
    if not (0.0 <= u < k.width and 0.0 <= v < k.height):
        return None
    return (float(u), float(v))
