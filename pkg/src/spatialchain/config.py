"""Scenario files: plain-text INI with one section per component.

Every key is addressed as ``section.key`` in diagnostics. Unknown sections
or keys are rejected; missing optional keys take the defaults below.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .controller import ControllerConfig, ReferencePaths
from .costs import CostWeights, Limits, default_weights
from .geometry import LinkPose
from .robot import RobotModel, default_robot
from .solver import SolverConfig
from .world import Task, World, build_forest, build_shelf_bar

WORLD_KINDS = ("forest", "shelf_bar", "custom")


class ConfigError(ValueError):
    """Malformed scenario; ``key`` names the offending ``section.key``."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class WorldSection:
    kind: str
    seed: int = 0
    density: float = 0.4
    extents: tuple = (20.0, 10.0, 3.0)
    # custom boxes as (cx, cy, cz, hx, hy, hz)
    boxes: tuple = ()


@dataclass(frozen=True)
class RobotSection:
    model: str = "builtin"


@dataclass(frozen=True)
class TaskSection:
    start: tuple = (1.0, 5.0)
    goal: tuple = (19.0, 5.0)
    waypoints: tuple = ()
    goal_kind: str = "base"
    ee_goal: tuple = ()
    start_angles: tuple = ()
    base_tol: float = 0.1
    ee_tol: float = 0.02
    ee_angle_tol_deg: float = 5.0
    max_steps: int = 600


@dataclass(frozen=True)
class ControllerSection:
    dt: float = 0.1
    perception_radius: float = 3.0
    lookahead: float = 0.5
    margin: float = 0.01
    local_plan: bool = True


@dataclass(frozen=True)
class SolverSection:
    tol_con: float = 1e-4
    tol_grad: float = 1e-6
    max_inner: int = 100
    max_outer: int = 30
    mu0: float = 1.0
    beta: float = 10.0
    reg0: float = 1e-6
    smooth_alpha_tau: float = 0.0


@dataclass(frozen=True)
class WeightsSection:
    q_terminal: tuple = (10.0, 10.0, 10.0, 5.0, 5.0, 5.0)
    q_base: tuple = (1.0, 1.0, 0.0, 0.0, 0.0, 1.0)
    r: float = 0.1


@dataclass(frozen=True)
class LimitsSection:
    u_lo: tuple = ()
    u_hi: tuple = ()
    theta_lo: tuple = ()
    theta_hi: tuple = ()


@dataclass(frozen=True)
class ScenarioConfig:
    world: WorldSection
    robot: RobotSection = field(default_factory=RobotSection)
    task: TaskSection = field(default_factory=TaskSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    solver: SolverSection = field(default_factory=SolverSection)
    weights: WeightsSection = field(default_factory=WeightsSection)
    limits: LimitsSection = field(default_factory=LimitsSection)

    def with_seed(self, seed: int) -> ScenarioConfig:
        return dataclasses.replace(self, world=dataclasses.replace(self.world, seed=int(seed)))

    # -- construction of runtime objects ------------------------------------

    def build_robot(self) -> RobotModel:
        model = default_robot()
        lim = self.limits
        if not any((lim.u_lo, lim.u_hi, lim.theta_lo, lim.theta_hi)):
            return model
        base = model.limits
        limits = Limits(
            theta_lo=np.array(lim.theta_lo or base.theta_lo),
            theta_hi=np.array(lim.theta_hi or base.theta_hi),
            u_lo=np.array(lim.u_lo or base.u_lo),
            u_hi=np.array(lim.u_hi or base.u_hi),
        )
        return dataclasses.replace(model, limits=limits)

    def build_world(self) -> World:
        w = self.world
        if w.kind == "forest":
            return build_forest(w.seed, w.density, w.extents, start=self.task.start, goal=self.task.goal)
        if w.kind == "shelf_bar":
            return build_shelf_bar(w.extents)
        boxes = np.array(w.boxes, dtype=float).reshape(-1, 6)
        return World(boxes[:, :3], boxes[:, 3:], np.array(w.extents), w.seed)

    def build_controller(self, model: RobotModel) -> ControllerConfig:
        c = self.controller
        s = self.solver
        solver = SolverConfig(
            tol_con=s.tol_con,
            tol_grad=s.tol_grad,
            max_inner=s.max_inner,
            max_outer=s.max_outer,
            mu0=s.mu0,
            beta=s.beta,
            reg0=s.reg0,
            smooth_alpha_tau=s.smooth_alpha_tau,
        )
        w = default_weights(model.num_stages)
        Q = w.Q_stage.copy()
        Q[2] = self.weights.q_base
        weights = CostWeights(np.array(self.weights.q_terminal), Q, np.full(model.num_stages, self.weights.r))
        return ControllerConfig(
            dt=c.dt,
            perception_radius=c.perception_radius,
            lookahead=c.lookahead,
            margin=c.margin,
            solver=solver,
            weights=weights,
            local_plan=c.local_plan,
        )

    def build_task(self, model: RobotModel) -> Task:
        t = self.task
        z = model.base_height
        pts = [t.start] + [t.waypoints[i : i + 2] for i in range(0, len(t.waypoints), 2)] + [t.goal]
        d = np.subtract(t.goal, t.start)
        yaw = math.atan2(d[1], d[0]) if np.linalg.norm(d) > 0 else 0.0
        q = (0.0, 0.0, math.sin(yaw / 2), math.cos(yaw / 2))
        base = [LinkPose.make((x, y, z), q) for x, y in pts]
        ee = [LinkPose.make(t.ee_goal[:3], t.ee_goal[3:])] if t.ee_goal else None
        angles = np.array(t.start_angles) if t.start_angles else np.array(model.home_angles)
        return Task(
            start=base[0],
            start_angles=angles,
            paths=ReferencePaths(base=base, ee=ee),
            goal_kind=t.goal_kind,
            base_tol=t.base_tol,
            ee_tol=t.ee_tol,
            ee_angle_tol=math.radians(t.ee_angle_tol_deg),
        )

    # -- text form ----------------------------------------------------------

    def to_text(self) -> str:
        out = []
        for name in SECTIONS:
            section = getattr(self, name)
            out.append(f"[{name}]")
            for f in dataclasses.fields(section):
                out.append(f"{f.name} = {_format(getattr(section, f.name))}")
            out.append("")
        return "\n".join(out)


SECTIONS = {
    "world": WorldSection,
    "robot": RobotSection,
    "task": TaskSection,
    "controller": ControllerSection,
    "solver": SolverSection,
    "weights": WeightsSection,
    "limits": LimitsSection,
}

REQUIRED = {"world": ("kind",)}

# expected lengths of tuple-valued keys (None = any length)
TUPLE_LENGTHS = {
    "world.extents": 3,
    "world.boxes": None,
    "task.start": 2,
    "task.goal": 2,
    "task.waypoints": None,
    "task.ee_goal": 7,
    "task.start_angles": 6,
    "weights.q_terminal": 6,
    "weights.q_base": 6,
    "limits.u_lo": 9,
    "limits.u_hi": 9,
    "limits.theta_lo": 6,
    "limits.theta_hi": 6,
}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return " ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
        if isinstance(default, tuple):
            vals = tuple(float(v) for v in raw.replace(",", " ").replace(";", " ").split())
            n = TUPLE_LENGTHS.get(key)
            if vals and n is not None and len(vals) != n:
                raise ConfigError(key, f"expected {n} numbers, got {len(vals)}")
            if key == "world.boxes" and len(vals) % 6:
                raise ConfigError(key, "boxes need six numbers each (cx cy cz hx hy hz)")
            if key == "task.waypoints" and len(vals) % 2:
                raise ConfigError(key, "waypoints need two numbers each")
            return vals
        return raw
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r}") from None


def _validate(cfg: ScenarioConfig) -> None:
    if cfg.world.kind not in WORLD_KINDS:
        raise ConfigError("world.kind", f"must be one of {', '.join(WORLD_KINDS)}")
    if cfg.world.kind == "forest" and cfg.world.density <= 0:
        raise ConfigError("world.density", "must be positive")
    if cfg.robot.model != "builtin":
        raise ConfigError("robot.model", "only the builtin model is available")
    if cfg.task.goal_kind not in ("base", "ee"):
        raise ConfigError("task.goal_kind", "must be base or ee")
    if cfg.task.goal_kind == "ee" and not cfg.task.ee_goal:
        raise ConfigError("task.ee_goal", "required when goal_kind = ee")
    if cfg.task.max_steps < 0:
        raise ConfigError("task.max_steps", "must be nonnegative")
    for name in ("dt", "perception_radius", "lookahead", "margin"):
        if getattr(cfg.controller, name) <= 0:
            raise ConfigError(f"controller.{name}", "must be positive")
    if cfg.weights.r <= 0:
        raise ConfigError("weights.r", "must be positive")


def parse_config(text: str) -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).splitlines()[0]) from None
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(name, "unknown section")
    sections = {}
    for name, cls in SECTIONS.items():
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                if key not in fields:
                    raise ConfigError(f"{name}.{key}", "unknown key")
                f = fields[key]
                default = f.default if f.default is not dataclasses.MISSING else ""
                values[key] = _parse_value(f"{name}.{key}", raw, default)
        for key in REQUIRED.get(name, ()):
            if key not in values:
                raise ConfigError(f"{name}.{key}", "missing required key")
        sections[name] = cls(**values)
    cfg = ScenarioConfig(**sections)
    _validate(cfg)
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    return parse_config(text)


def default_forest_config(seed: int = 0, density: float = 0.4) -> ScenarioConfig:
    return ScenarioConfig(world=WorldSection(kind="forest", seed=seed, density=density))
