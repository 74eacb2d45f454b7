"""Robot description: chain layout, link bodies, limits and forward kinematics.

The shipped model is a generic omnidirectional base carrying a 6-DOF arm.
All dimensions are illustrative defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import BASE_STAGES, ChainObservation, ChainSpec
from .containment import LinkGeometry
from .costs import Limits
from .free_region import SkeletonSegment
from .geometry import LinkPose, Transform, axis_angle_matrix, matrix_to_quat, pose_to_transform

LINK_DIRECTION = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class RobotModel:
    """Chain spec plus everything needed to place and collide its links.

    Arm link ``i`` has its frame on joint ``i`` and extends ``link_lengths[i]``
    along its local z axis to the next joint.
    """

    spec: ChainSpec
    base_geometry: LinkGeometry
    link_geometries: tuple
    link_lengths: np.ndarray
    arm_mount: Transform
    limits: Limits
    base_height: float = 0.15
    home_angles: np.ndarray = field(default_factory=lambda: np.zeros(6))
    base_region_dims: tuple = (0.8, 0.8, 0.8)
    link_region_dims: tuple = (0.4, 0.3, 0.3)

    @property
    def num_stages(self) -> int:
        return self.spec.num_stages

    def constrained_stages(self) -> list:
        """Stage 3 carries the physical base; virtual stages 1-2 are skipped."""
        return list(range(BASE_STAGES, self.spec.num_stages + 1))

    def geometry(self, k: int) -> LinkGeometry:
        if k == BASE_STAGES:
            return self.base_geometry
        return self.link_geometries[k - BASE_STAGES - 1]

    def arm_poses(self, base_pose: LinkPose, joint_angles) -> list:
        """Forward kinematics of the arm links from the base pose."""
        T = pose_to_transform(base_pose)
        R = T.rotation @ self.arm_mount.rotation
        p = T.translation + T.rotation @ self.arm_mount.translation
        poses = []
        for i, (axis, th) in enumerate(zip(self.spec.joint_axes, joint_angles)):
            if i > 0:
                p = p + R @ (LINK_DIRECTION * self.link_lengths[i - 1])
            R = R @ axis_angle_matrix(axis, float(th))
            poses.append(LinkPose(p.copy(), matrix_to_quat(R)))
        return poses

    def observe(self, base_pose: LinkPose, joint_angles, timestamp: float = 0.0) -> ChainObservation:
        return ChainObservation.from_poses(base_pose, self.arm_poses(base_pose, joint_angles), joint_angles, timestamp)

    def skeleton(self, k: int, pose: LinkPose) -> SkeletonSegment:
        p = np.asarray(pose.p, dtype=float)
        if k == BASE_STAGES:
            return SkeletonSegment(p, p.copy())
        L = self.link_lengths[k - BASE_STAGES - 1]
        R = pose_to_transform(pose).rotation
        return SkeletonSegment(p, p + R @ (LINK_DIRECTION * L))

    def region_dims(self, k: int, seg: SkeletonSegment) -> np.ndarray:
        """Seed-box extents; arm boxes put their long side on the midline's dominant axis."""
        if k == BASE_STAGES:
            return np.asarray(self.base_region_dims, dtype=float)
        dims = sorted(self.link_region_dims, reverse=True)
        d = np.abs(np.asarray(seg.b) - np.asarray(seg.a))
        major = int(np.argmax(d))
        return np.insert(np.array(dims[1:]), major, dims[0])


def default_robot() -> RobotModel:
    lengths = np.array([0.3, 0.3, 0.25, 0.2, 0.15, 0.1])
    x, y, z = np.eye(3)
    axes = (z, y, y, x, y, x)
    half_w = 0.04
    links = tuple(LinkGeometry.box([-half_w, -half_w, 0.0], [half_w, half_w, L]) for L in lengths)
    spec = ChainSpec(
        num_stages=BASE_STAGES + 6,
        joint_axes=axes,
        ee_offset=Transform.from_translation([0.0, 0.0, lengths[-1]]),
        link_geometry=(None, None, None) + links,
    )
    base = LinkGeometry.box([-0.25, -0.2, -0.15], [0.25, 0.2, 0.15])
    limits = Limits(
        theta_lo=np.array([-np.pi, -2.2, -2.5, -np.pi, -2.2, -np.pi]),
        theta_hi=np.array([np.pi, 2.2, 2.5, np.pi, 2.2, np.pi]),
        u_lo=np.array([-0.4, -0.4, -1.0] + [-1.0] * 6),
        u_hi=np.array([0.4, 0.4, 1.0] + [1.0] * 6),
    )
    return RobotModel(
        spec=spec,
        base_geometry=base,
        link_geometries=links,
        link_lengths=lengths,
        arm_mount=Transform.from_translation([0.1, 0.0, 0.15]),
        limits=limits,
    )
