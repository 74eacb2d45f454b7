"""Kinematic chain propagation for a mobile manipulator.

The chain has ``num_stages`` single-DOF stages. Stages 1-3 split the planar
base motion into body-x translation, body-y translation and yaw; every later
stage is a revolute arm joint. Stage ``k`` consumes the freshly propagated
pose of its predecessor (the observed base pose for ``k = 1``) and produces
the next-step pose of link ``k``::

    q_1 = T(q_3^t) · Tx(u_1 dt)
    q_2 = T(q_1)   · Ty(u_2 dt)
    q_3 = T(q_2)   · Rz(u_3 dt)
    q_k = T(q_{k-1}) · T(q_{k-1}^t, q_k^t) · Rot(axis_k, u_k dt)      k >= 4

The end effector is one extra control-free stage through ``ee_offset``.

Internally the stages work on ``(R, p)`` pairs; the public functions accept
and return :class:`~spatialchain.geometry.LinkPose`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    InvalidInputError,
    LinkPose,
    Transform,
    axis_angle_matrix,
    compose,
    matrix_to_quat,
    pose_to_transform,
    quat_to_matrix,
    relative_transform,
)

BASE_STAGES = 3
X_AXIS = np.array([1.0, 0.0, 0.0])
Y_AXIS = np.array([0.0, 1.0, 0.0])
Z_AXIS = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class ChainSpec:
    """Static description of the chain.

    ``joint_axes`` holds one local rotation axis per arm stage (stage 4 on).
    ``link_geometry`` optionally maps each stage to a link body (index 0 is
    stage 1); ``None`` entries carry no collision geometry.
    """

    num_stages: int
    joint_axes: tuple
    ee_offset: Transform = field(default_factory=Transform.identity)
    link_geometry: tuple = ()

    def __post_init__(self):
        if self.num_stages < BASE_STAGES + 1:
            raise InvalidInputError("a chain needs the three base stages and at least one joint")
        if len(self.joint_axes) != self.num_stages - BASE_STAGES:
            raise InvalidInputError("one joint axis per arm stage is required")
        axes = tuple(np.asarray(a, dtype=float) for a in self.joint_axes)
        for a in axes:
            if abs(np.linalg.norm(a) - 1.0) > 1e-6:
                raise InvalidInputError("joint axes must be unit norm")
        object.__setattr__(self, "joint_axes", axes)

    @property
    def num_arm(self) -> int:
        return self.num_stages - BASE_STAGES


@dataclass(frozen=True)
class ChainObservation:
    """Chain state measured at time ``t``.

    ``link_poses_t[k-1]`` is the pose of stage ``k``; the three virtual base
    stages all sit at the base pose. ``rel_transforms_t[i]`` caches
    ``T(q_{i+1}^t, q_{i+2}^t)``.
    """

    base_pose_t: LinkPose
    link_poses_t: tuple
    joint_angles_t: np.ndarray
    rel_transforms_t: tuple
    timestamp: float = 0.0

    @classmethod
    def from_poses(
        cls,
        base_pose: LinkPose,
        arm_poses: Sequence[LinkPose],
        joint_angles,
        timestamp: float = 0.0,
    ) -> ChainObservation:
        poses = (base_pose,) * BASE_STAGES + tuple(arm_poses)
        rel = tuple(relative_transform(a, b) for a, b in zip(poses[:-1], poses[1:]))
        return cls(base_pose, poses, np.asarray(joint_angles, dtype=float), rel, timestamp)


@dataclass(frozen=True)
class ChainTrajectory:
    """Poses of stages ``1..N`` followed by the end-effector pose."""

    poses: tuple

    @property
    def end_effector(self) -> LinkPose:
        return self.poses[-1]

    @property
    def base(self) -> LinkPose:
        return self.poses[BASE_STAGES - 1]


# ----------------------------------------------------------------------------
# stage models on (R, p)
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class StageModel:
    """One single-DOF propagation step ``X -> X · pre · motion(u dt)``.

    ``translate`` stages move along ``axis`` (expressed after ``pre``);
    ``rotate`` stages turn about it. ``axis`` may be ``None`` for the
    control-free end-effector stage.
    """

    translate: bool
    axis: Optional[np.ndarray]
    pre_R: np.ndarray
    pre_t: np.ndarray
    dt: float

    def step(self, R: np.ndarray, p: np.ndarray, u: float):
        if self.axis is None:
            return R @ self.pre_R, p + R @ self.pre_t
        if self.translate:
            RC = R @ self.pre_R
            return RC, p + R @ self.pre_t + RC @ (self.axis * (u * self.dt))
        return R @ self.pre_R @ axis_angle_matrix(self.axis, u * self.dt), p + R @ self.pre_t

    def jacobians(self, R: np.ndarray, p: np.ndarray, u: float, p_out: np.ndarray):
        """Tangent Jacobians ``A`` (6x6) and ``B`` (6,) of :meth:`step`."""
        lever = p_out - p
        A = np.eye(6)
        A[0, 4] = lever[2]
        A[0, 5] = -lever[1]
        A[1, 3] = -lever[2]
        A[1, 5] = lever[0]
        A[2, 3] = lever[1]
        A[2, 4] = -lever[0]
        B = np.zeros(6)
        if self.axis is not None:
            world_axis = R @ (self.pre_R @ self.axis) * self.dt
            if self.translate:
                B[:3] = world_axis
            else:
                B[3:] = world_axis
        return A, B


def _check_stage(k: int, spec: ChainSpec) -> None:
    if not 1 <= k <= spec.num_stages:
        raise InvalidInputError(f"stage index {k} outside 1..{spec.num_stages}")


def stage_model(k: int, obs: ChainObservation, dt: float, spec: ChainSpec) -> StageModel:
    _check_stage(k, spec)
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    eye = np.eye(3)
    zero = np.zeros(3)
    if k == 1:
        return StageModel(True, X_AXIS, eye, zero, dt)
    if k == 2:
        return StageModel(True, Y_AXIS, eye, zero, dt)
    if k == 3:
        return StageModel(False, Z_AXIS, eye, zero, dt)
    rel = obs.rel_transforms_t[k - 2]
    return StageModel(False, spec.joint_axes[k - 1 - BASE_STAGES], rel.rotation, rel.translation, dt)


def ee_model(spec: ChainSpec) -> StageModel:
    return StageModel(False, None, spec.ee_offset.rotation, spec.ee_offset.translation, 1.0)


def stage_models(obs: ChainObservation, dt: float, spec: ChainSpec) -> list:
    """All stage models followed by the end-effector stage."""
    models = [stage_model(k, obs, dt, spec) for k in range(1, spec.num_stages + 1)]
    models.append(ee_model(spec))
    return models


def _check_obs(obs: ChainObservation, spec: ChainSpec) -> None:
    if len(obs.link_poses_t) != spec.num_stages:
        raise InvalidInputError("observation has the wrong number of link poses")
    if len(obs.rel_transforms_t) != spec.num_stages - 1:
        raise InvalidInputError("observation has the wrong number of relative transforms")


def _to_pose(R, p) -> LinkPose:
    return LinkPose(np.array(p, dtype=float), matrix_to_quat(R))


# ----------------------------------------------------------------------------
# public operations
# ----------------------------------------------------------------------------


def propagate_chain(obs: ChainObservation, u, dt: float, spec: ChainSpec) -> ChainTrajectory:
    """Propagate every stage under controls ``u`` held for ``dt``."""
    u = np.asarray(u, dtype=float)
    _check_obs(obs, spec)
    if u.shape != (spec.num_stages,):
        raise InvalidInputError(f"expected {spec.num_stages} controls, got {u.shape}")
    models = stage_models(obs, dt, spec)
    base = pose_to_transform(obs.base_pose_t)
    R, p = base.rotation, base.translation
    poses = []
    for model, uk in zip(models, list(u) + [0.0]):
        R, p = model.step(R, p, uk)
        poses.append(_to_pose(R, p))
    return ChainTrajectory(tuple(poses))


def stage_dynamics(x: LinkPose, u: float, k: int, obs: ChainObservation, dt: float, spec: ChainSpec) -> LinkPose:
    """Pose of stage ``k`` given the propagated pose ``x`` of its predecessor."""
    model = stage_model(k, obs, dt, spec)
    T = pose_to_transform(x)
    R, p = model.step(T.rotation, T.translation, float(u))
    return _to_pose(R, p)


def end_effector_pose(x: LinkPose, spec: ChainSpec) -> LinkPose:
    return transform_pose(x, spec.ee_offset)


def transform_pose(x: LinkPose, offset: Transform) -> LinkPose:
    T = compose(pose_to_transform(x), offset)
    return _to_pose(T.rotation, T.translation)


def dynamics_jacobians(x: LinkPose, u: float, k: int, obs: ChainObservation, dt: float, spec: ChainSpec):
    """Return ``(A, B)``: 6x6 and 6x1 tangent Jacobians of :func:`stage_dynamics`."""
    model = stage_model(k, obs, dt, spec)
    T = pose_to_transform(x)
    R, p = T.rotation, T.translation
    _, p_out = model.step(R, p, float(u))
    A, B = model.jacobians(R, p, float(u), p_out)
    return A, B.reshape(6, 1)


def joint_rotation(axis, angle: float) -> np.ndarray:
    return axis_angle_matrix(np.asarray(axis, dtype=float), angle)


def rotation_of(pose: LinkPose) -> np.ndarray:
    return quat_to_matrix(pose.r)
