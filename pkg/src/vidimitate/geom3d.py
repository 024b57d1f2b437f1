"""Rigid transforms, rotation conversions and the pinhole camera model.

Quaternions are always ordered (w, x, y, z). A :class:`Pose` maps points from
its child frame into its parent frame (object-in-camera unless stated
otherwise), so ``compose(a, b)`` applies ``b`` first and then ``a``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

__all__ = [
    "Pose",
    "CameraIntrinsics",
    "NonPositiveDepth",
    "InvalidDepth",
    "canonical_quat",
    "quat_multiply",
    "quat_conjugate",
    "quat_to_matrix",
    "matrix_to_quat",
    "quat_to_rotvec",
    "rotvec_to_quat",
    "rotation_angle",
    "compose",
    "inverse",
    "project",
    "backproject",
    "load_intrinsics",
    "save_intrinsics",
]


class NonPositiveDepth(ValueError):
    """A point at or behind the camera plane was projected."""


class InvalidDepth(ValueError):
    """A depth value is zero, negative or not finite."""


def canonical_quat(q) -> np.ndarray:
    """Normalize ``q`` and pick the representative with ``w >= 0``.

    When ``w == 0`` the first nonzero component is made positive.
    """
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalize quaternion {q!r}")
    q = q / n
    for c in q:
        if c != 0.0:
            return -q if c < 0.0 else q
    return q


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a * b`` for (w, x, y, z) quaternions. Broadcasts."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q) -> np.ndarray:
    return Rotation.from_quat(np.asarray(q, dtype=float), scalar_first=True).as_matrix()


def matrix_to_quat(R) -> np.ndarray:
    q = Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat(scalar_first=True)
    return canonical_quat(q)


def quat_to_rotvec(q) -> np.ndarray:
    """Axis-angle vector (radians) of a unit quaternion, magnitude in [0, pi]."""
    q = canonical_quat(q)
    # canonical w >= 0 keeps the half-angle in [0, pi/2]
    s = math.sqrt(q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
    if s == 0.0:
        return np.zeros(3)
    angle = 2.0 * math.atan2(s, q[0])
    return q[1:] * (angle / s)


def rotvec_to_quat(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"rotation vector must be finite, got {v!r}")
    angle = float(np.linalg.norm(v))
    if angle == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return canonical_quat(np.concatenate([[math.cos(half)], v * (math.sin(half) / angle)]))


def rotation_angle(q1, q2) -> float:
    """Geodesic angle between two orientations, in degrees, range [0, 180].

    Equal to ``2 acos(|<q1, q2>|)`` but evaluated through ``atan2`` on the
    relative quaternion, which stays accurate for nearly identical rotations.
    """
    rel = quat_multiply(quat_conjugate(q1), q2)
    s = math.sqrt(rel[1] ** 2 + rel[2] ** 2 + rel[3] ** 2)
    return math.degrees(2.0 * math.atan2(s, abs(rel[0])))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: ``x_parent = R(rotation) @ x_child + translation``."""

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        q = canonical_quat(np.array(self.rotation, dtype=float).reshape(4))
        if not np.all(np.isfinite(t)):
            raise ValueError(f"translation must be finite, got {t!r}")
        t.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, 3], matrix_to_quat(T[:3, :3]))

    @classmethod
    def from_rt(cls, R, t) -> "Pose":
        return cls(t, matrix_to_quat(R))

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(translation, rotvec_to_quat(rotvec))

    @classmethod
    def translate(cls, x: float, y: float, z: float) -> "Pose":
        return cls([x, y, z], [1.0, 0.0, 0.0, 0.0])

    @classmethod
    def rot_axis(cls, axis, degrees: float) -> "Pose":
        """Pure rotation about ``axis`` (a 3-vector or one of ``"x"``, ``"y"``, ``"z"``)."""
        if isinstance(axis, str):
            axis = np.eye(3)["xyz".index(axis)]
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        return cls.from_rotvec(axis * math.radians(degrees))

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self.rotation)

    def apply(self, points) -> np.ndarray:
        """Transform points of shape (3,) or (N, 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.R.T + self.translation

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __repr__(self) -> str:
        t = np.array2string(self.translation, precision=6)
        q = np.array2string(self.rotation, precision=6)
        return f"Pose(t={t}, q={q})"


def compose(a: Pose, b: Pose) -> Pose:
    """``compose(a, b).apply(x) == a.apply(b.apply(x))``."""
    q = quat_multiply(a.rotation, b.rotation)
    t = a.R @ b.translation + a.translation
    return Pose(t, q)


def inverse(p: Pose) -> Pose:
    q = quat_conjugate(p.rotation)
    return Pose(-(quat_to_matrix(q) @ p.translation), q)


_BOUNDS_EPS = 1e-9


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
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def in_bounds(self, px) -> np.ndarray:
        """Boolean mask of pixel positions inside ``[0, width-1] x [0, height-1]``.

        A margin of 1e-9 px absorbs round-off from projecting back-projected edge pixels.
        """
        px = np.asarray(px, dtype=float)
        u, v = px[..., 0], px[..., 1]
        e = _BOUNDS_EPS
        return (u >= -e) & (u <= self.width - 1 + e) & (v >= -e) & (v <= self.height - 1 + e)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}


def project(K: CameraIntrinsics, p) -> np.ndarray:
    """Pinhole projection of camera-frame points, shape (3,) or (N, 3)."""
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth(f"cannot project points with z <= 0 (min z = {np.min(z)})")
    u = K.fx * p[..., 0] / z + K.cx
    v = K.fy * p[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def backproject(K: CameraIntrinsics, px, depth) -> np.ndarray:
    """Inverse of :func:`project` for a known depth (z, meters)."""
    px = np.asarray(px, dtype=float)
    depth = np.asarray(depth, dtype=float)
    if np.any(~np.isfinite(depth)) or np.any(depth <= 0):
        raise InvalidDepth(f"depth must be finite and positive, got {depth!r}")
    if not np.all(K.in_bounds(px)):
        raise ValueError("pixel outside image bounds")
    x = (px[..., 0] - K.cx) / K.fx * depth
    y = (px[..., 1] - K.cy) / K.fy * depth
    return np.stack([x, y, depth * np.ones_like(x)], axis=-1)


def load_intrinsics(path) -> CameraIntrinsics:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return CameraIntrinsics(
        fx=float(data["fx"]),
        fy=float(data["fy"]),
        cx=float(data["cx"]),
        cy=float(data["cy"]),
        width=int(data["width"]),
        height=int(data["height"]),
    )


def save_intrinsics(K: CameraIntrinsics, path) -> None:
    Path(path).write_text(json.dumps(K.to_dict()) + "\n", encoding="utf-8")
