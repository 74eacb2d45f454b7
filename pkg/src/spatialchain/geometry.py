"""Rigid-body pose algebra for link states.

Conventions
-----------
* Quaternions are stored as ``[x, y, z, w]`` and kept in the canonical
  hemisphere ``w >= 0`` after every normalization.
* A :class:`LinkPose` is the 7-D link state (position + unit quaternion).
* A :class:`Transform` is the matrix form ``(R, t)`` of the same object.
* Small pose changes use a 6-D tangent ``d = [v, w]``: ``v`` shifts the
  position in the world frame, ``w`` is a rotation vector applied on the left
  (world frame), i.e. ``R' = exp(w) R``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-6
HALF_TURN_TOL = 1e-12

IDENTITY_QUAT = np.array([0.0, 0.0, 0.0, 1.0])


class InvalidInputError(ValueError):
    """Raised when a quaternion or rotation is too far from valid."""


# ----------------------------------------------------------------------------
# small dense helpers (np.cross is slow for single 3-vectors)
# ----------------------------------------------------------------------------


def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def skew(a: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -a[2], a[1]],
            [a[2], 0.0, -a[0]],
            [-a[1], a[0], 0.0],
        ]
    )


# ----------------------------------------------------------------------------
# quaternion and rotation primitives
# ----------------------------------------------------------------------------


def canonical_quat(q: np.ndarray) -> np.ndarray:
    """Normalize ``q`` and flip it into the ``w >= 0`` hemisphere.

    Half turns (``|w|`` below ``HALF_TURN_TOL``) get ``w = 0`` and the first
    non-negligible vector component positive, so both signs map to one value.
    """
    q = np.asarray(q, dtype=float)
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if n == 0.0:
        raise InvalidInputError("zero quaternion")
    q = q / n
    if abs(q[3]) <= HALF_TURN_TOL:
        q = np.array([q[0], q[1], q[2], 0.0])
        for c in q[:3]:
            if abs(c) > HALF_TURN_TOL:
                if c < 0.0:
                    q = -q
                break
        return q / np.linalg.norm(q)
    if q[3] < 0.0:
        q = -q
    return q


def check_unit_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise InvalidInputError(f"quaternion must have 4 components, got {q.shape}")
    if abs(float(q @ q) - 1.0) > UNIT_TOL * 2:
        raise InvalidInputError(f"quaternion is not unit norm: |q| = {np.linalg.norm(q)}")
    return q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a ⊗ b`` for ``[x, y, z, w]`` quaternions."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns the canonical (``w >= 0``) quaternion."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array(
            [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array(
            [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
        )
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array(
            [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
        )
    return canonical_quat(q)


def rotvec_to_quat(w: np.ndarray) -> np.ndarray:
    angle = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    if angle < 1e-8:
        # second-order series keeps the map smooth at the origin
        half = 0.5 - angle * angle / 48.0
        return np.array([w[0] * half, w[1] * half, w[2] * half, 1.0 - angle * angle / 8.0])
    s = math.sin(0.5 * angle) / angle
    return np.array([w[0] * s, w[1] * s, w[2] * s, math.cos(0.5 * angle)])


def rotvec_to_matrix(w: np.ndarray) -> np.ndarray:
    """Rodrigues' formula."""
    angle = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    K = skew(w)
    if angle < 1e-8:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = math.sin(angle) / angle
    b = (1.0 - math.cos(angle)) / (angle * angle)
    return np.eye(3) + a * K + b * (K @ K)


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation by ``angle`` about the unit vector ``axis``."""
    x, y, z = axis
    c = math.cos(angle)
    s = math.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


def matrix_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R`` with angle in ``[0, pi]``."""
    q = matrix_to_quat(R)
    v = q[:3]
    s = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if s < 1e-12:
        return 2.0 * v
    angle = 2.0 * math.atan2(s, q[3])
    return v * (angle / s)


# ----------------------------------------------------------------------------
# pose and transform types
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkPose:
    """Position ``p`` (m) and unit quaternion ``r`` (``[x, y, z, w]``)."""

    p: np.ndarray
    r: np.ndarray

    @classmethod
    def identity(cls) -> LinkPose:
        return cls(np.zeros(3), IDENTITY_QUAT.copy())

    @classmethod
    def make(cls, p=(0.0, 0.0, 0.0), r=(0.0, 0.0, 0.0, 1.0)) -> LinkPose:
        return cls(np.asarray(p, dtype=float).copy(), canonical_quat(np.asarray(r, dtype=float)))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.r])


@dataclass(frozen=True)
class Transform:
    """Homogeneous transform ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> Transform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> Transform:
        return cls(np.eye(3), np.asarray(t, dtype=float).copy())

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> Transform:
        Rt = self.rotation.T
        return Transform(Rt, -(Rt @ self.translation))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.rotation.T + self.translation


def _check_rotation(R: np.ndarray) -> None:
    if R.shape != (3, 3):
        raise InvalidInputError(f"rotation must be 3x3, got {R.shape}")
    if np.max(np.abs(R.T @ R - np.eye(3))) > UNIT_TOL or abs(np.linalg.det(R) - 1.0) > UNIT_TOL:
        raise InvalidInputError("rotation matrix is not orthonormal with det +1")


def pose_to_transform(q: LinkPose) -> Transform:
    """The map from a 7-D link state to its world transform."""
    r = check_unit_quat(q.r)
    return Transform(quat_to_matrix(r / math.sqrt(float(r @ r))), np.asarray(q.p, dtype=float))


def transform_to_pose(T: Transform) -> LinkPose:
    """Inverse of :func:`pose_to_transform` with the canonical quaternion sign."""
    _check_rotation(T.rotation)
    return LinkPose(np.array(T.translation, dtype=float), matrix_to_quat(T.rotation))


def compose(a: Transform, b: Transform) -> Transform:
    return Transform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def relative_transform(a: LinkPose, b: LinkPose) -> Transform:
    """Transform ``X`` with ``T(a) X = T(b)``."""
    return compose(pose_to_transform(a).inverse(), pose_to_transform(b))


CONTROL_KINDS = ("translate_x", "translate_y", "rotate_z", "rotate_joint")


def control_transform(u: float, dt: float, kind: str, axis=None) -> Transform:
    """Motion produced by holding control ``u`` for ``dt`` seconds.

    ``translate_*`` kinds move ``u * dt`` metres along the local axis;
    ``rotate_z`` and ``rotate_joint`` turn ``u * dt`` radians about the local
    z axis or about ``axis``.
    """
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    s = u * dt
    if kind == "translate_x":
        return Transform(np.eye(3), np.array([s, 0.0, 0.0]))
    if kind == "translate_y":
        return Transform(np.eye(3), np.array([0.0, s, 0.0]))
    if kind == "rotate_z":
        return Transform(axis_angle_matrix(np.array([0.0, 0.0, 1.0]), s), np.zeros(3))
    if kind == "rotate_joint":
        if axis is None:
            raise InvalidInputError("rotate_joint needs an axis")
        axis = np.asarray(axis, dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > UNIT_TOL:
            raise InvalidInputError("joint axis must be unit norm")
        return Transform(axis_angle_matrix(axis, s), np.zeros(3))
    raise InvalidInputError(f"unknown control kind {kind!r}")


def quat_error(r: np.ndarray, r_hat: np.ndarray) -> np.ndarray:
    """Rotation error between the current ``r`` and desired ``r_hat``.

    ``e = r_w * v_hat - r_hat_w * v + v_hat x v`` with ``v``/``v_hat`` the
    vector parts. Not antisymmetric in its arguments.
    """
    r = check_unit_quat(r)
    r_hat = check_unit_quat(r_hat)
    return _quat_error(r, r_hat)


def _quat_error(r: np.ndarray, r_hat: np.ndarray) -> np.ndarray:
    v = r[:3]
    vh = r_hat[:3]
    return r[3] * vh - r_hat[3] * v + cross(vh, v)


def quat_error_jacobian(r: np.ndarray, r_hat: np.ndarray) -> np.ndarray:
    """d quat_error / d w for the left perturbation ``r' = exp(w) ⊗ r``."""
    v = r[:3]
    vh = r_hat[:3]
    left = skew(vh) - r_hat[3] * np.eye(3)
    right = r[3] * np.eye(3) - skew(v)
    return 0.5 * (left @ right - np.outer(vh, v))


def apply_tangent(q: LinkPose, d: np.ndarray) -> LinkPose:
    """Perturb ``q`` by the 6-D tangent ``d = [v, w]`` (world frame, left)."""
    d = np.asarray(d, dtype=float)
    r = quat_multiply(rotvec_to_quat(d[3:]), q.r)
    return LinkPose(q.p + d[:3], canonical_quat(r))


def tangent_between(a: LinkPose, b: LinkPose) -> np.ndarray:
    """Tangent ``d`` with ``apply_tangent(b, d) == a``."""
    Ra = quat_to_matrix(a.r)
    Rb = quat_to_matrix(b.r)
    return np.concatenate([a.p - b.p, matrix_log(Ra @ Rb.T)])


def rotation_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle (rad) of the relative rotation between two unit quaternions."""
    c = abs(float(np.dot(a, b)))
    return 2.0 * math.acos(min(1.0, c))
