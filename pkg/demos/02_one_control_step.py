"""One controller tick: regions, references, solve, certified next state.

Run: python demos/02_one_control_step.py
"""

import numpy as np

from spatialchain import Controller, ControllerConfig, LinkPose, ObstacleCloud, ReferencePaths, default_robot
from spatialchain.chain import end_effector_pose, propagate_chain
from spatialchain.world import box_surface_points

robot = default_robot()
obs = robot.observe(LinkPose.make((0.0, 0.0, robot.base_height)), robot.home_angles)

## a cube straight ahead of the base, and goals beyond it
cloud = ObstacleCloud(box_surface_points([0.7, 0.0, 0.1], [0.1, 0.1, 0.1]))
base_goal = LinkPose.make((3.0, 0.0, robot.base_height))
ee_now = end_effector_pose(obs.link_poses_t[-1], robot.spec)
ee_goal = LinkPose(ee_now.p + [0.2, 0.1, 0.1], ee_now.r)
paths = ReferencePaths(base=[obs.base_pose_t, base_goal], ee=[ee_goal])

## solve
cfg = ControllerConfig()
ctl = Controller(robot, cfg)
u, diag = ctl.step(obs, cloud, paths)

print("status:", diag.status, f"({diag.outer_iterations} outer / {diag.inner_iterations} inner)")
print(f"solve {diag.solve_ms:.1f} ms, tick {diag.tick_ms:.1f} ms")
print("base  u [vx vy wz]:", np.round(u[:3], 3))
print("joint u:", np.round(u[3:], 3))
print("alphas:", np.round(diag.alphas, 3), "certified:", diag.certified)

## the base reference bends around the cube
ref = ctl.references(obs, paths, cloud.points).link(3)
print("base reference:", np.round(ref.p[:2], 3))

## commit and compare
nxt = propagate_chain(obs, u, cfg.dt, robot.spec)
print("base moves to", np.round(nxt.base.p, 3))
print("ee distance to goal: before %.3f, after %.3f" % (
    np.linalg.norm(ee_now.p - ee_goal.p), np.linalg.norm(nxt.poses[-1].p - ee_goal.p)))
