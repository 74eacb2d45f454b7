"""Reactive whole-body controller: one spatial solve per control tick.

Each tick filters the perceived cloud to the perception sphere, grows one
free region per physical link around its current midline, assembles the
spatial problem and hands it to the AL-DDP solver. The previous tick's
controls warm-start the solve and the previous regions are the fallback
when a link's region cannot be grown.

Reference following uses a lookahead point on the supplied (possibly
unsafe) global paths. Optionally the base target is taken from a short
grid search around the perceived points toward a point further along the
global path; this only moves the tracking target, safety stays with the
containment constraints.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .chain import BASE_STAGES, ChainObservation, end_effector_pose, propagate_chain
from .containment import min_scaling
from .costs import CostWeights, ReferenceSet, build_constraints, default_weights
from .free_region import DEFAULT_MARGIN, ObstacleCloud, SeedInfeasibleError, extract_region
from .geometry import LinkPose, canonical_quat
from .robot import RobotModel
from .solver import SolveReport, SolverConfig, SpatialProblem, solve


@dataclass(frozen=True)
class ControllerConfig:
    dt: float = 0.1
    perception_radius: float = 3.0
    lookahead: float = 0.5
    margin: float = DEFAULT_MARGIN
    solver: SolverConfig = field(default_factory=SolverConfig)
    weights: Optional[CostWeights] = None
    # local grid planning of the base reference around perceived points
    local_plan: bool = True
    plan_horizon: float = 2.5
    plan_resolution: float = 0.1
    plan_clearance: float = 0.25
    plan_soft: float = 0.6
    plan_soft_weight: float = 4.0
    plan_height: float = 0.45

    def __post_init__(self):
        for name in ("dt", "perception_radius", "lookahead"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ReferencePaths:
    """Global guidance: a base polyline and/or an end-effector polyline."""

    base: Optional[Sequence[LinkPose]] = None
    ee: Optional[Sequence[LinkPose]] = None


@dataclass
class StepDiagnostics:
    status: str
    alphas: list
    solve_ms: float
    tick_ms: float
    active_constraints: int
    fallback: list
    max_violation: float
    inner_iterations: int
    outer_iterations: int
    missing_regions: list = field(default_factory=list)

    @property
    def certified(self) -> bool:
        """Converged, every link certified and every region freshly grown."""
        return (
            self.status == "converged"
            and not any(self.fallback)
            and not self.missing_regions
            and all(a <= 1.0 + 1e-4 for a in self.alphas)
        )


# ----------------------------------------------------------------------------
# references
# ----------------------------------------------------------------------------


def _slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    d = float(a @ b)
    if d < 0.0:
        b = -b
        d = -d
    if d > 0.9995:
        return canonical_quat(a + t * (b - a))
    theta = math.acos(d)
    s = math.sin(theta)
    return canonical_quat((math.sin((1 - t) * theta) * a + math.sin(t * theta) * b) / s)


def reference_lookahead(path: Sequence[LinkPose], current: LinkPose, lookahead: float) -> LinkPose:
    """Project ``current`` on the polyline, then advance ``lookahead`` metres."""
    if not path:
        raise ValueError("reference path is empty")
    if len(path) == 1:
        return path[0]
    P = np.array([q.p for q in path], dtype=float)
    seg = P[1:] - P[:-1]
    lengths = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    x = np.asarray(current.p, dtype=float)
    best_d = math.inf
    best_s = 0.0
    for i in range(len(seg)):
        L2 = lengths[i] ** 2
        t = 0.0 if L2 == 0.0 else min(1.0, max(0.0, float((x - P[i]) @ seg[i]) / L2))
        d = float(np.sum((P[i] + t * seg[i] - x) ** 2))
        if d < best_d - 1e-15:
            best_d = d
            best_s = cum[i] + t * lengths[i]
    s = best_s + lookahead
    if s >= cum[-1]:
        return path[-1]
    i = int(np.searchsorted(cum, s, side="right") - 1)
    i = min(max(i, 0), len(seg) - 1)
    t = 0.0 if lengths[i] == 0.0 else (s - cum[i]) / lengths[i]
    return LinkPose(P[i] + t * seg[i], _slerp(path[i].r, path[i + 1].r, t))


def _grid_graph(cost: np.ndarray, blocked: np.ndarray, res: float):
    """8-connected grid graph; edge weight = length x mean cell cost."""
    n_x, n_y = cost.shape
    idx = np.arange(n_x * n_y).reshape(n_x, n_y)
    rows, cols, weights = [], [], []
    for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1)):
        xs = slice(0, n_x - dx)
        xd = slice(dx, n_x)
        ys = slice(max(0, -dy), n_y - max(0, dy))
        yd = slice(max(0, dy), n_y - max(0, -dy))
        a = idx[xs, ys].ravel()
        b = idx[xd, yd].ravel()
        ok = ~(blocked[xs, ys].ravel() | blocked[xd, yd].ravel())
        w = res * math.hypot(dx, dy) * 0.5 * (cost[xs, ys].ravel() + cost[xd, yd].ravel())
        rows += [a[ok], b[ok]]
        cols += [b[ok], a[ok]]
        weights += [w[ok], w[ok]]
    n = n_x * n_y
    return csr_matrix((np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def plan_local_path(start_xy, goal_xy, points_xy: np.ndarray, cfg: ControllerConfig) -> Optional[np.ndarray]:
    """Grid shortest path for the base centre around perceived obstacles.

    Cells closer than ``plan_clearance`` to a point are blocked and cells
    closer than ``plan_soft`` cost extra, so the path keeps to the middle of
    gaps. When the goal cell is unreachable the reachable cell closest to it
    is used. Returns ``(m, 2)`` waypoints or ``None`` when no move helps.
    """
    res = cfg.plan_resolution
    start_xy = np.asarray(start_xy, dtype=float)
    half = cfg.perception_radius
    n = int(round(2 * half / res)) + 1
    origin = start_xy - half
    occ = np.zeros((n, n), dtype=bool)
    if len(points_xy):
        ij = np.round((points_xy - origin) / res).astype(int)
        keep = np.all((ij >= 0) & (ij < n), axis=1)
        occ[ij[keep, 0], ij[keep, 1]] = True
    dist = distance_transform_edt(~occ) * res if occ.any() else np.full((n, n), np.inf)
    blocked = dist < cfg.plan_clearance
    s_ij = (int(round(half / res)),) * 2
    blocked[s_ij] = False
    excess = np.clip((cfg.plan_soft - dist) / (cfg.plan_soft - cfg.plan_clearance), 0.0, 1.0)
    cost = 1.0 + cfg.plan_soft_weight * excess**2
    graph = _grid_graph(cost, blocked, res)
    s = s_ij[0] * n + s_ij[1]
    d, pred = dijkstra(graph, indices=s, return_predecessors=True)
    g = np.clip(np.round((np.asarray(goal_xy, dtype=float) - origin) / res).astype(int), 0, n - 1)
    reach = np.isfinite(d)
    cells = np.flatnonzero(reach)
    cx, cy = np.divmod(cells, n)
    gap = np.hypot(cx - g[0], cy - g[1]) * res
    best = int(cells[np.argmin(gap + 1e-3 * d[cells])])
    if best == s:
        return None
    path = [best]
    while path[-1] != s:
        path.append(int(pred[path[-1]]))
    path.reverse()
    ij = np.array(np.divmod(np.array(path), n)).T
    pts = origin + ij * res
    pts[0] = start_xy
    return pts


def plan_base_reference(
    path: Sequence[LinkPose],
    base: LinkPose,
    ref: LinkPose,
    points: np.ndarray,
    cfg: ControllerConfig,
) -> LinkPose:
    """Lookahead point on a locally planned detour of the global base path."""
    pts = points[points[:, 2] < cfg.plan_height][:, :2] if len(points) else np.zeros((0, 2))
    if len(pts) == 0:
        return ref
    goal = reference_lookahead(path, base, cfg.plan_horizon)
    local = plan_local_path(base.p[:2], goal.p[:2], pts, cfg)
    if local is None:
        return ref
    poses = [LinkPose(np.array([x, y, ref.p[2]]), ref.r) for x, y in local]
    return reference_lookahead(poses, base, cfg.lookahead)


# ----------------------------------------------------------------------------
# controller
# ----------------------------------------------------------------------------


def filter_cloud(cloud: ObstacleCloud, center, radius: float) -> np.ndarray:
    pts = np.asarray(cloud.points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return pts
    keep = np.sum((pts - np.asarray(center, dtype=float)) ** 2, axis=1) <= radius * radius
    return pts[keep]


class Controller:
    """Stateful wrapper: warm start and fallback regions between ticks."""

    def __init__(self, model: RobotModel, cfg: ControllerConfig = ControllerConfig()):
        self.model = model
        self.cfg = cfg
        self.weights = cfg.weights or default_weights(model.num_stages)
        self.prev_u: Optional[np.ndarray] = None
        self.prev_regions: dict = {}
        self.last_regions: dict = {}
        self.last_report: Optional[SolveReport] = None

    def reset(self) -> None:
        self.prev_u = None
        self.prev_regions = {}

    def regions_for(self, obs: ChainObservation, points: np.ndarray):
        regions = {}
        fallback = []
        missing = []
        cloud = ObstacleCloud(points)
        for k in self.model.constrained_stages():
            pose = obs.link_poses_t[k - 1]
            seg = self.model.skeleton(k, pose)
            try:
                regions[k] = extract_region(seg, cloud, self.model.region_dims(k, seg), self.cfg.margin)
                fallback.append(False)
            except SeedInfeasibleError:
                fallback.append(True)
                if k in self.prev_regions:
                    regions[k] = self.prev_regions[k]
                else:
                    missing.append(k)
        return regions, fallback, missing

    def references(self, obs: ChainObservation, paths: ReferencePaths, points: np.ndarray) -> ReferenceSet:
        links = [None] * self.model.num_stages
        ee = None
        base = obs.base_pose_t
        if paths.base:
            ref = reference_lookahead(paths.base, base, self.cfg.lookahead)
            if self.cfg.local_plan:
                ref = plan_base_reference(paths.base, base, ref, points, self.cfg)
            links[BASE_STAGES - 1] = ref
        if paths.ee:
            current = end_effector_pose(obs.link_poses_t[-1], self.model.spec)
            ee = reference_lookahead(paths.ee, current, self.cfg.lookahead)
        return ReferenceSet(tuple(links), ee)

    def step(self, obs: ChainObservation, cloud: ObstacleCloud, paths: ReferencePaths):
        """Return ``(controls, diagnostics)`` for one tick."""
        t0 = time.perf_counter()
        cfg = self.cfg
        points = filter_cloud(cloud, obs.base_pose_t.p, cfg.perception_radius)
        regions, fallback, missing = self.regions_for(obs, points)
        refs = self.references(obs, paths, points)
        geoms = {k: self.model.geometry(k) for k in regions}
        tau = cfg.solver.smooth_alpha_tau or None
        cons = build_constraints(
            obs, self.model.spec, self.model.limits, cfg.dt, regions, geoms, tau, tie_tol=cfg.solver.tie_tol
        )
        u0 = self.prev_u if self.prev_u is not None else np.zeros(self.model.num_stages)
        u0 = self.model.limits.clamp(u0)
        problem = SpatialProblem.from_chain(obs, self.model.spec, cfg.dt, self.weights, refs, cons, u0)
        t1 = time.perf_counter()
        report = solve(problem, cfg.solver)
        solve_ms = 1e3 * (time.perf_counter() - t1)
        u = self.model.limits.clamp(report.controls)
        if not np.all(np.isfinite(u)):
            u = np.zeros_like(u)
        traj = propagate_chain(obs, u, cfg.dt, self.model.spec)
        alphas = []
        for k in self.model.constrained_stages():
            if k in regions:
                alphas.append(min_scaling(geoms[k], traj.poses[k - 1], regions[k]).alpha)
            else:
                alphas.append(math.nan)
        self.prev_u = u.copy()
        self.prev_regions = {k: r for k, r in regions.items()}
        self.last_regions = regions
        self.last_report = report
        diag = StepDiagnostics(
            status=report.status,
            alphas=alphas,
            solve_ms=solve_ms,
            tick_ms=1e3 * (time.perf_counter() - t0),
            active_constraints=int(np.sum(report.constraint_values > -cfg.solver.tol_con)),
            fallback=fallback,
            max_violation=report.max_violation,
            inner_iterations=report.inner_iterations,
            outer_iterations=report.outer_iterations,
            missing_regions=missing,
        )
        return u, diag


def control_step(
    obs: ChainObservation,
    cloud: ObstacleCloud,
    paths: ReferencePaths,
    cfg: ControllerConfig,
    model: RobotModel,
    warm_start: Optional[np.ndarray] = None,
    previous_regions: Optional[dict] = None,
):
    """Functional form of :meth:`Controller.step`."""
    ctl = Controller(model, cfg)
    ctl.prev_u = None if warm_start is None else np.asarray(warm_start, dtype=float)
    ctl.prev_regions = dict(previous_regions or {})
    return ctl.step(obs, cloud, paths)
