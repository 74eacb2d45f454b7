"""Drive the base across a random cube forest and summarize the run.

Run: python demos/03_forest_run.py [seed]
"""

import sys
from collections import Counter

import numpy as np

from spatialchain import ControllerConfig, build_forest, default_robot, run_episode, straight_base_task

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

## 20 x 10 m map, 0.4 cubes per square metre
world = build_forest(seed, density=0.4)
robot = default_robot()
task = straight_base_task(robot, start_xy=(1.0, 5.0), goal_xy=(19.0, 5.0))
print(f"seed {seed}: {len(world)} cubes")

## closed loop
log = []
m = run_episode(world, robot, task, ControllerConfig(), max_steps=600, log=log)

print("success:", m.success, f"after {m.steps} ticks ({m.steps * 0.1:.1f} s simulated)")
print(f"path length {m.path_length:.2f} m, collisions {m.collision_count}")
print(f"solve time mean {m.mean_solve_ms:.1f} ms, max {m.max_solve_ms:.1f} ms")
print("tick status:", dict(Counter(r["status"] for r in log)))

## closest approach of the base to the cubes
xy = np.array([r["poses"][2][:2] for r in log])
d = np.linalg.norm(xy[:, None, :] - world.centers[None, :, :2], axis=2).min(axis=1)
print(f"closest base-centre to cube-centre distance: {d.min():.3f} m")

## a coarse look at the track
for r in log[:: max(1, len(log) // 10)]:
    x, y = r["poses"][2][:2]
    print(f"  t={r['time']:5.1f}s  x={x:6.2f}  y={y:5.2f}  alpha_base={r['alphas'][0]:.2f}")
