"""SO(3)/SE(3) primitives shared across the package.

Quaternions are stored as (w, x, y, z), Hamilton convention, unit norm.
All task-space quantities (poses, twists, wrenches) are expressed in the
world/base frame unless stated otherwise.
"""

from __future__ import annotations

import dataclasses

import numpy as np

Array = np.ndarray

_UNIT_TOL = 1e-6


def quat_normalize(q: Array) -> Array:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize zero/non-finite quaternion")
    return q / n


def quat_conj(q: Array) -> Array:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_mul(a: Array, b: Array) -> Array:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_canonical(q: Array) -> Array:
    """Representative with non-negative scalar part (resolves double cover)."""
    q = np.asarray(q, dtype=float)
    return -q if q[0] < 0.0 else q


def quat_to_mat(q: Array) -> Array:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def mat_to_quat(R: Array) -> Array:
    """Rotation matrix to unit quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(quat_canonical(q))


def quat_from_rotvec(v: Array) -> Array:
    """exp map: rotation vector (axis * angle) to quaternion."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        # sin(a/2)/a ~ 1/2 - a^2/48
        s = 0.5 - angle * angle / 48.0
        return quat_normalize(np.array([1.0, s * v[0], s * v[1], s * v[2]]))
    axis = v / angle
    half = 0.5 * angle
    s = np.sin(half)
    return np.array([np.cos(half), s * axis[0], s * axis[1], s * axis[2]])


def quat_to_rotvec(q: Array) -> Array:
    """log map: quaternion to rotation vector with angle in [0, pi]."""
    q = quat_canonical(quat_normalize(q))
    w = min(q[0], 1.0)
    vec = q[1:]
    s = np.linalg.norm(vec)
    if s < 1e-12:
        # angle/sin(angle/2) ~ 2 + angle^2/12 for small angles
        return 2.0 * vec
    angle = 2.0 * np.arctan2(s, w)
    return vec * (angle / s)


def quat_rotate(q: Array, v: Array) -> Array:
    return quat_to_mat(q) @ np.asarray(v, dtype=float)


def rodrigues(axis: Array, angle: float) -> Array:
    """Rotation matrix about a unit axis."""
    ax = np.asarray(axis, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    K = np.array([[0.0, -ax[2], ax[1]], [ax[2], 0.0, -ax[0]], [-ax[1], ax[0], 0.0]])
    return c * np.eye(3) + s * K + (1.0 - c) * np.outer(ax, ax)


def skew(v: Array) -> Array:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


@dataclasses.dataclass(frozen=True)
class Pose:
    """Rigid transform: position (m) plus unit quaternion (w, x, y, z)."""

    position: Array
    orientation: Array

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        q = np.array(self.orientation, dtype=float).reshape(4)
        if not np.all(np.isfinite(p)) or not np.all(np.isfinite(q)):
            raise ValueError("pose entries must be finite")
        n = np.linalg.norm(q)
        if abs(n - 1.0) > _UNIT_TOL:
            raise ValueError(f"quaternion norm {n} too far from 1")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q / n)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @property
    def rotation(self) -> Array:
        return quat_to_mat(self.orientation)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other (apply other in self's frame)."""
        return Pose(
            self.position + quat_rotate(self.orientation, other.position),
            quat_mul(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        qi = quat_conj(self.orientation)
        return Pose(-quat_rotate(qi, self.position), qi)

    def transform_point(self, p: Array) -> Array:
        return self.position + quat_rotate(self.orientation, p)

    def as_vector(self) -> Array:
        """Length-7 layout: position then quaternion (w, x, y, z)."""
        return np.concatenate([self.position, self.orientation])

    @staticmethod
    def from_vector(v: Array) -> "Pose":
        v = np.asarray(v, dtype=float).reshape(7)
        return Pose(v[:3], v[3:])


@dataclasses.dataclass(frozen=True)
class Twist:
    linear: Array
    angular: Array

    def __post_init__(self):
        lin = np.array(self.linear, dtype=float).reshape(3)
        ang = np.array(self.angular, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(ang))):
            raise ValueError("twist entries must be finite")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    def as_vector(self) -> Array:
        return np.concatenate([self.linear, self.angular])

    @staticmethod
    def from_vector(v: Array) -> "Twist":
        v = np.asarray(v, dtype=float).reshape(6)
        return Twist(v[:3], v[3:])


@dataclasses.dataclass(frozen=True)
class Wrench:
    force: Array
    torque: Array

    def __post_init__(self):
        f = np.array(self.force, dtype=float).reshape(3)
        t = np.array(self.torque, dtype=float).reshape(3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(t))):
            raise ValueError("wrench entries must be finite")
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque", t)

    @staticmethod
    def zero() -> "Wrench":
        return Wrench(np.zeros(3), np.zeros(3))

    def as_vector(self) -> Array:
        return np.concatenate([self.force, self.torque])

    @staticmethod
    def from_vector(v: Array) -> "Wrench":
        v = np.asarray(v, dtype=float).reshape(6)
        return Wrench(v[:3], v[3:])
