"""Grow a free region around one arm link and measure how well the link fits.

Run: python demos/01_regions_and_scaling.py
"""

import numpy as np

from spatialchain import LinkPose, ObstacleCloud, default_robot, extract_region, min_scaling, scaling_gradient
from spatialchain.world import box_surface_points

## a robot standing next to a small cube
robot = default_robot()
obs = robot.observe(LinkPose.make((0.0, 0.0, robot.base_height)), robot.home_angles)
cube = box_surface_points(center=[0.3, 0.15, 0.75], half=[0.1, 0.1, 0.1])
cloud = ObstacleCloud(cube)
print(f"{len(cube)} obstacle points")

## region around the second arm link (stage 5)
k = 5
pose = obs.link_poses_t[k - 1]
seg = robot.skeleton(k, pose)
region = extract_region(seg, cloud, robot.region_dims(k, seg))
print(f"stage {k}: {region.num_faces} faces, center {np.round(region.center, 3)}")

# no point may lie strictly inside
inside = (cloud.points - region.center) @ region.normals.T < region.offsets - 1e-9
print("points strictly inside:", int(np.sum(np.all(inside, axis=1))))

## scaling factor: <= 1 means the link is certified collision free
res = min_scaling(robot.geometry(k), pose, region)
print(f"alpha = {res.alpha:.4f} (vertex {res.active_vertex}, face {res.active_face})")

## gradient w.r.t. a small pose change [dp, dtheta]
g = scaling_gradient(robot.geometry(k), pose, region)
print("d alpha / d pose:", np.round(g, 4))

# push the link toward the cube and watch alpha grow
for shift in (0.0, 0.05, 0.1, 0.15):
    moved = LinkPose(pose.p + shift * np.array([1.0, 0.0, 0.0]), pose.r)
    print(f"  shift {shift:.2f} m -> alpha {min_scaling(robot.geometry(k), moved, region).alpha:.3f}")
