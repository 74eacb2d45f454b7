"""Deterministic desk-scale simulation: worlds, perception, collision, episodes."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .chain import BASE_STAGES, ChainObservation, end_effector_pose, propagate_chain
from .controller import Controller, ControllerConfig, ReferencePaths
from .free_region import ObstacleCloud
from .geometry import LinkPose, pose_to_transform, rotation_angle
from .robot import RobotModel

SAMPLE_SPACING = 0.05
CUBE_EDGE = 0.2


class WorldGenerationError(RuntimeError):
    pass


@dataclass
class World:
    """Axis-aligned box obstacles; ``centers``/``half_extents`` are ``(n, 3)``."""

    centers: np.ndarray
    half_extents: np.ndarray
    bounds: np.ndarray = field(default_factory=lambda: np.array([20.0, 10.0, 3.0]))
    seed: Optional[int] = None
    _samples: Optional[tuple] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(-1, 3)
        self.bounds = np.asarray(self.bounds, dtype=float)

    def __len__(self) -> int:
        return len(self.centers)

    @classmethod
    def empty(cls, bounds=(20.0, 10.0, 3.0)) -> World:
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.asarray(bounds, dtype=float))

    def surface_samples(self):
        """All face sample points with the owning box index of each point."""
        if self._samples is None:
            pts = [box_surface_points(c, h) for c, h in zip(self.centers, self.half_extents)]
            owner = [np.full(len(p), i) for i, p in enumerate(pts)]
            if pts:
                self._samples = (np.vstack(pts), np.concatenate(owner))
            else:
                self._samples = (np.zeros((0, 3)), np.zeros(0, dtype=int))
        return self._samples


def box_surface_points(center, half, spacing: float = SAMPLE_SPACING) -> np.ndarray:
    """Grid samples on the six faces (edge points repeat across faces)."""
    center = np.asarray(center, dtype=float)
    half = np.asarray(half, dtype=float)
    out = []
    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]
        gu = np.linspace(-half[u], half[u], int(round(2 * half[u] / spacing)) + 1)
        gv = np.linspace(-half[v], half[v], int(round(2 * half[v] / spacing)) + 1)
        U, V = np.meshgrid(gu, gv, indexing="ij")
        for sign in (1.0, -1.0):
            face = np.zeros((U.size, 3))
            face[:, axis] = sign * half[axis]
            face[:, u] = U.ravel()
            face[:, v] = V.ravel()
            out.append(face + center)
    return np.vstack(out)


def build_forest(
    seed: int,
    density: float,
    extents=(20.0, 10.0, 3.0),
    start=(1.0, 5.0),
    goal=(19.0, 5.0),
    clear_radius: float = 1.0,
    edge: float = CUBE_EDGE,
) -> World:
    """Uniformly scattered floor cubes, none overlapping the start/goal discs."""
    if density <= 0:
        raise ValueError("density must be positive")
    extents = np.asarray(extents, dtype=float)
    count = math.ceil(round(density * extents[0] * extents[1], 9))
    rng = np.random.default_rng(seed)
    half = edge / 2.0
    discs = np.array([start, goal], dtype=float)
    centers = []
    rejections = 0
    while len(centers) < count:
        xy = rng.uniform([half, half], [extents[0] - half, extents[1] - half])
        nearest = np.clip(discs, xy - half, xy + half)
        if np.any(np.linalg.norm(nearest - discs, axis=1) < clear_radius):
            rejections += 1
            if rejections > 10_000:
                raise WorldGenerationError("could not place all obstacles")
            continue
        centers.append([xy[0], xy[1], half])
    halves = np.full((count, 3), half)
    return World(np.array(centers).reshape(-1, 3), halves, extents, seed)


def build_wall(x: float, extents=(20.0, 10.0, 3.0), thickness: float = 0.2, height: float = 1.0) -> World:
    """A wall spanning the whole map width at ``x`` (no gap)."""
    c = [[x, extents[1] / 2.0, height / 2.0]]
    h = [[thickness / 2.0, extents[1] / 2.0, height / 2.0]]
    return World(np.array(c), np.array(h), np.asarray(extents, dtype=float))


def build_shelf_bar(extents=(10.0, 4.0, 3.0)) -> World:
    """Floating bar across the corridor followed by a three-layer bookcase."""
    boxes = [
        # floating bar: robot passes beneath it
        ([3.0, 2.0, 1.05], [0.05, 2.0, 0.05]),
    ]
    # bookcase at x in [6.0, 6.4], open towards -x
    x0, x1 = 6.0, 6.4
    cx, hx = (x0 + x1) / 2, (x1 - x0) / 2
    y0, y1 = 1.6, 2.4
    for z in (0.0, 0.5, 1.0, 1.5):
        boxes.append(([cx, (y0 + y1) / 2, z + 0.015], [hx, (y1 - y0) / 2, 0.015]))
    for y in (y0, y1):
        boxes.append(([cx, y, 0.78], [hx, 0.015, 0.78]))
    boxes.append(([x1 + 0.015, (y0 + y1) / 2, 0.78], [0.015, (y1 - y0) / 2, 0.78]))
    c = np.array([b[0] for b in boxes])
    h = np.array([b[1] for b in boxes])
    return World(c, h, np.asarray(extents, dtype=float))


def perceive(world: World, center, radius: float) -> ObstacleCloud:
    """Surface samples of nearby obstacles within ``radius`` of ``center``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if len(world) == 0:
        return ObstacleCloud.empty()
    center = np.asarray(center, dtype=float)
    lo = world.centers - world.half_extents
    hi = world.centers + world.half_extents
    gap = np.clip(center, lo, hi) - center
    near = np.flatnonzero(np.einsum("ij,ij->i", gap, gap) <= radius * radius)
    if len(near) == 0:
        return ObstacleCloud.empty()
    pts, owner = world.surface_samples()
    pts = pts[np.isin(owner, near)]
    d2 = np.sum((pts - center) ** 2, axis=1)
    return ObstacleCloud(pts[d2 <= radius * radius])


# ----------------------------------------------------------------------------
# collision checking
# ----------------------------------------------------------------------------


def _sat_polytope_box(verts, normals, edges, c, h, eps: float = 1e-12) -> bool:
    """True iff the open interiors of the hull and the box intersect."""
    axes = [np.eye(3), normals]
    cr = np.cross(np.eye(3)[:, None, :], edges[None, :, :]).reshape(-1, 3)
    n = np.linalg.norm(cr, axis=1)
    axes.append(cr[n > 1e-9] / n[n > 1e-9, None])
    A = np.vstack(axes)
    proj = verts @ A.T
    pmin = proj.min(axis=0)
    pmax = proj.max(axis=0)
    bc = A @ c
    br = np.abs(A) @ h
    separated = (pmax <= bc - br + eps) | (bc + br <= pmin + eps)
    return not bool(np.any(separated))


def link_world_vertices(model: RobotModel, k: int, pose: LinkPose) -> np.ndarray:
    T = pose_to_transform(pose)
    return model.geometry(k).vertices @ T.rotation.T + T.translation


def ground_truth_collision(world: World, poses: Sequence[LinkPose], model: RobotModel):
    """Exact hull-vs-box test for every physical link.

    ``poses[k-1]`` is the pose of stage ``k``. Returns ``(hit, (stage, box))``
    with ``None`` for the witness when nothing collides. Touching without
    interior overlap does not count.
    """
    if len(world) == 0:
        return False, None
    lo = world.centers - world.half_extents
    hi = world.centers + world.half_extents
    for k in model.constrained_stages():
        pose = poses[k - 1]
        verts = link_world_vertices(model, k, pose)
        vlo = verts.min(axis=0)
        vhi = verts.max(axis=0)
        cand = np.flatnonzero(np.all((vlo < hi) & (lo < vhi), axis=1))
        if len(cand) == 0:
            continue
        R = pose_to_transform(pose).rotation
        normals, edges = model.geometry(k).hull()
        wn = normals @ R.T
        we = edges @ R.T
        for b in cand:
            if _sat_polytope_box(verts, wn, we, world.centers[b], world.half_extents[b]):
                return True, (k, int(b))
    return False, None


# ----------------------------------------------------------------------------
# episodes
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Task:
    """Start state, guidance paths and what counts as arriving."""

    start: LinkPose
    start_angles: np.ndarray
    paths: ReferencePaths
    goal_kind: str = "base"
    base_tol: float = 0.1
    ee_tol: float = 0.02
    ee_angle_tol: float = math.radians(5.0)

    def goal_pose(self) -> LinkPose:
        path = self.paths.ee if self.goal_kind == "ee" else self.paths.base
        return path[-1]


def straight_base_task(model: RobotModel, start_xy, goal_xy, yaw: Optional[float] = None, angles=None) -> Task:
    start_xy = np.asarray(start_xy, dtype=float)
    goal_xy = np.asarray(goal_xy, dtype=float)
    d = goal_xy - start_xy
    if yaw is None:
        yaw = math.atan2(d[1], d[0]) if np.linalg.norm(d) > 0 else 0.0
    q = np.array([0.0, 0.0, math.sin(yaw / 2), math.cos(yaw / 2)])
    z = model.base_height
    start = LinkPose.make([start_xy[0], start_xy[1], z], q)
    goal = LinkPose.make([goal_xy[0], goal_xy[1], z], q)
    angles = model.home_angles if angles is None else np.asarray(angles, dtype=float)
    return Task(start, np.array(angles, dtype=float), ReferencePaths(base=[start, goal]))


@dataclass
class EpisodeMetrics:
    success: bool
    collision_count: int
    path_length: float
    mean_solve_ms: float
    max_solve_ms: float
    steps: int
    mean_tick_ms: float = 0.0
    converged_ticks: int = 0
    certified_ticks: int = 0
    certified_collisions: int = 0
    max_converged_violation: float = 0.0
    reached_goal: bool = False

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def goal_reached(task: Task, obs: ChainObservation, model: RobotModel) -> bool:
    goal = task.goal_pose()
    if task.goal_kind == "ee":
        ee = end_effector_pose(obs.link_poses_t[-1], model.spec)
        return (
            float(np.linalg.norm(ee.p - goal.p)) <= task.ee_tol
            and rotation_angle(ee.r, goal.r) <= task.ee_angle_tol
        )
    return float(np.linalg.norm(obs.base_pose_t.p[:2] - goal.p[:2])) <= task.base_tol


def _pose_record(q: LinkPose) -> list:
    return [float(v) for v in np.concatenate([q.p, q.r])]


def run_episode(
    world: World,
    model: RobotModel,
    task: Task,
    cfg: ControllerConfig = ControllerConfig(),
    max_steps: int = 600,
    log: Optional[list] = None,
    controller: Optional[Controller] = None,
) -> EpisodeMetrics:
    """Closed loop until the goal tolerance is met or ``max_steps`` ticks pass.

    Each tick: perceive, solve, commit the predicted next chain state, then
    check the committed state against the true obstacles. Per-tick records
    are appended to ``log`` when given. Passing ``controller`` lets the
    caller inspect its final regions afterwards.
    """
    controller = controller or Controller(model, cfg)
    obs = model.observe(task.start, task.start_angles, 0.0)
    angles = np.array(task.start_angles, dtype=float)
    path_length = 0.0
    collisions = 0
    solve_ms = []
    tick_ms = []
    converged = 0
    certified = 0
    certified_hits = 0
    max_conv_viol = 0.0
    reached = goal_reached(task, obs, model)
    steps = 0
    while not reached and steps < max_steps:
        cloud = perceive(world, obs.base_pose_t.p, cfg.perception_radius)
        u, diag = controller.step(obs, cloud, task.paths)
        traj = propagate_chain(obs, u, cfg.dt, model.spec)
        hit, witness = ground_truth_collision(world, traj.poses, model)
        steps += 1
        collisions += int(hit)
        solve_ms.append(diag.solve_ms)
        tick_ms.append(diag.tick_ms)
        if diag.status == "converged":
            converged += 1
            max_conv_viol = max(max_conv_viol, diag.max_violation)
        if diag.certified:
            certified += 1
            certified_hits += int(hit)
        step_len = float(np.linalg.norm(traj.base.p - obs.base_pose_t.p))
        path_length += step_len
        angles = angles + u[BASE_STAGES:] * cfg.dt
        obs = ChainObservation.from_poses(traj.base, traj.poses[BASE_STAGES:-1], angles, obs.timestamp + cfg.dt)
        if log is not None:
            log.append(
                {
                    "tick": steps,
                    "time": obs.timestamp,
                    "poses": [_pose_record(q) for q in traj.poses],
                    "controls": [float(v) for v in u],
                    "alphas": [float(a) for a in diag.alphas],
                    "solve_ms": diag.solve_ms,
                    "tick_ms": diag.tick_ms,
                    "status": diag.status,
                    "fallback": [bool(f) for f in diag.fallback],
                    "collision": bool(hit),
                    "witness": list(witness) if witness else None,
                }
            )
        reached = goal_reached(task, obs, model)
    return EpisodeMetrics(
        success=bool(reached and collisions == 0),
        collision_count=collisions,
        path_length=path_length,
        mean_solve_ms=float(np.mean(solve_ms)) if solve_ms else 0.0,
        max_solve_ms=float(np.max(solve_ms)) if solve_ms else 0.0,
        steps=steps,
        mean_tick_ms=float(np.mean(tick_ms)) if tick_ms else 0.0,
        converged_ticks=converged,
        certified_ticks=certified,
        certified_collisions=certified_hits,
        max_converged_violation=max_conv_viol,
        reached_goal=bool(reached),
    )
