"""Tracking costs, box limits and containment constraints for one control step.

All derivatives are taken with respect to the 6-D pose tangent (see
:mod:`spatialchain.geometry`) and, where a control enters, the scalar
control appended as a seventh coordinate. Cost Hessians are Gauss-Newton.

The numeric defaults in :func:`default_weights` are engineering choices for
the shipped benchmark robot, not published values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .chain import BASE_STAGES, ChainObservation, ChainSpec
from .containment import LinkGeometry, scaling_rp, scaling_value_rp, smoothed_rp
from .free_region import FreeRegion
from .geometry import LinkPose, _quat_error, matrix_to_quat, quat_error_jacobian, quat_to_matrix

BOX_ANGLE = "box_angle"
BOX_CONTROL = "box_control"
CONTAINMENT = "containment"
EQUALITY = "equality"


@dataclass(frozen=True)
class CostWeights:
    """Diagonal weights: ``Q_terminal`` (6,), ``Q_stage`` (N, 6), ``R_stage`` (N,)."""

    Q_terminal: np.ndarray
    Q_stage: np.ndarray
    R_stage: np.ndarray

    def __post_init__(self):
        for name in ("Q_terminal", "Q_stage", "R_stage"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.Q_terminal < 0) or np.any(self.Q_stage < 0):
            raise ValueError("tracking weights must be nonnegative")
        if np.any(self.R_stage <= 0):
            raise ValueError("control weights must be positive")
        if self.Q_stage.ndim != 2 or self.Q_stage.shape[1] != 6 or len(self.Q_stage) != len(self.R_stage):
            raise ValueError("Q_stage must be (N, 6) with one R per stage")


def default_weights(num_stages: int) -> CostWeights:
    Q = np.zeros((num_stages, 6))
    Q[BASE_STAGES - 1] = [1.0, 1.0, 0.0, 0.0, 0.0, 1.0]
    return CostWeights(
        Q_terminal=np.array([10.0, 10.0, 10.0, 5.0, 5.0, 5.0]),
        Q_stage=Q,
        R_stage=np.full(num_stages, 0.1),
    )


@dataclass(frozen=True)
class ReferenceSet:
    """Optional desired pose per stage (``links[k-1]``) and for the end effector."""

    links: tuple = ()
    ee: Optional[LinkPose] = None

    def link(self, k: int) -> Optional[LinkPose]:
        if k - 1 < len(self.links):
            return self.links[k - 1]
        return None


@dataclass(frozen=True)
class Limits:
    theta_lo: np.ndarray
    theta_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray

    def __post_init__(self):
        for name in ("theta_lo", "theta_hi", "u_lo", "u_hi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.theta_lo >= self.theta_hi) or np.any(self.u_lo >= self.u_hi):
            raise ValueError("every lower limit must be below its upper limit")

    def clamp(self, u) -> np.ndarray:
        return np.minimum(np.maximum(np.asarray(u, dtype=float), self.u_lo), self.u_hi)


# ----------------------------------------------------------------------------
# costs
# ----------------------------------------------------------------------------


def tracking_terms(R: np.ndarray, p: np.ndarray, ref: LinkPose, Q: np.ndarray):
    """Value, tangent gradient and Gauss-Newton Hessian of ``e^T diag(Q) e``."""
    r = matrix_to_quat(R)
    e = np.empty(6)
    e[:3] = p - ref.p
    e[3:] = _quat_error(r, ref.r)
    J = np.eye(6)
    J[3:, 3:] = quat_error_jacobian(r, ref.r)
    QJ = Q[:, None] * J
    value = float(e @ (Q * e))
    grad = 2.0 * (QJ.T @ e)
    hess = 2.0 * (J.T @ QJ)
    return value, grad, hess


def stage_cost(x: LinkPose, u: float, k: int, refs: ReferenceSet, w: CostWeights):
    """``J_k = e^T Q_k e + R_k u^2``; returns ``(value, grad (7,), hess (7, 7))``."""
    grad = np.zeros(7)
    hess = np.zeros((7, 7))
    value = 0.0
    ref = refs.link(k)
    Q = w.Q_stage[k - 1]
    if ref is not None and np.any(Q > 0):
        value, grad[:6], hess[:6, :6] = tracking_terms(quat_to_matrix(x.r), np.asarray(x.p), ref, Q)
    Rk = w.R_stage[k - 1]
    value += Rk * u * u
    grad[6] = 2.0 * Rk * u
    hess[6, 6] = 2.0 * Rk
    return value, grad, hess


def terminal_cost(x_ee: LinkPose, refs: ReferenceSet, w: CostWeights):
    """End-effector tracking cost; ``(value, grad (6,), hess (6, 6))``."""
    if refs.ee is None:
        return 0.0, np.zeros(6), np.zeros((6, 6))
    return tracking_terms(quat_to_matrix(x_ee.r), np.asarray(x_ee.p), refs.ee, w.Q_terminal)


# ----------------------------------------------------------------------------
# constraints
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlConstraint:
    """``coef * u_k + bias <= 0``; every box limit is affine in the control."""

    stage: int
    coef: float
    bias: float
    tag: str

    def value(self, u: float) -> float:
        return self.coef * u + self.bias


@dataclass(frozen=True)
class StateConstraint:
    """``fn(R, p) -> (c, grad6)`` on the pose produced by ``stage``.

    ``stage == N + 1`` addresses the end effector. Equality constraints
    (``equality=True``) mean ``c == 0``. ``value_fn(R, p) -> c`` is an
    optional cheaper path used when only the value is needed.
    """

    stage: int
    fn: Callable
    tag: str
    equality: bool = False
    value_fn: Optional[Callable] = None

    def value(self, R, p) -> float:
        if self.value_fn is not None:
            return self.value_fn(R, p)
        return self.fn(R, p)[0]


@dataclass
class ConstraintSet:
    control: list = field(default_factory=list)
    state: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.control) + len(self.state)

    def tags(self) -> list:
        return [c.tag for c in self.control] + [c.tag for c in self.state]


def box_constraints(x: LinkPose, u: float, k: int, obs: ChainObservation, limits: Limits, dt: float):
    """Box limits of stage ``k`` as ``[(c, grad (7,), tag), ...]``.

    ``x`` does not enter; the joint angle after the step is ``theta^t + u dt``.
    """
    out = []
    for con in control_box_constraints(k, obs, limits, dt):
        g = np.zeros(7)
        g[6] = con.coef
        out.append((con.value(u), g, con.tag))
    return out


def control_box_constraints(k: int, obs: ChainObservation, limits: Limits, dt: float) -> list:
    cons = []
    if k > BASE_STAGES:
        j = k - BASE_STAGES - 1
        th = float(obs.joint_angles_t[j])
        cons.append(ControlConstraint(k, dt, th - float(limits.theta_hi[j]), BOX_ANGLE))
        cons.append(ControlConstraint(k, -dt, float(limits.theta_lo[j]) - th, BOX_ANGLE))
    cons.append(ControlConstraint(k, 1.0, -float(limits.u_hi[k - 1]), BOX_CONTROL))
    cons.append(ControlConstraint(k, -1.0, float(limits.u_lo[k - 1]), BOX_CONTROL))
    return cons


def containment_fn(
    geom: LinkGeometry, region: FreeRegion, tau: Optional[float] = None, tie_tol: float = 0.0
) -> Callable:
    """``(R, p) -> (alpha - 1, grad)``, exact max or log-sum-exp smoothed.

    ``tie_tol`` averages the gradient over nearly tied vertex/face pairs
    (see :func:`spatialchain.containment.scaling_rp`); the value is exact.
    """
    verts = geom.vertices
    if tau:
        def fn(R, p):
            a, g = smoothed_rp(verts, R, p, region, tau)
            return a - 1.0, g
    else:
        def fn(R, p):
            a, g, _, _ = scaling_rp(verts, R, p, region, tie_tol)
            return a - 1.0, g
    return fn


def containment_value_fn(geom: LinkGeometry, region: FreeRegion, tau: Optional[float] = None) -> Callable:
    """Value-only companion of :func:`containment_fn`."""
    if tau:
        fn = containment_fn(geom, region, tau)
        return lambda R, p: fn(R, p)[0]
    verts = geom.vertices
    return lambda R, p: scaling_value_rp(verts, R, p, region) - 1.0


def containment_constraints(x: LinkPose, k: int, regions, geoms):
    """``alpha_k - 1 <= 0`` for stage ``k`` with its 6-D gradient."""
    fn = containment_fn(geoms[k], regions[k])
    return fn(quat_to_matrix(x.r), np.asarray(x.p, dtype=float))


def build_constraints(
    obs: ChainObservation,
    spec: ChainSpec,
    limits: Limits,
    dt: float,
    regions: Optional[dict] = None,
    geoms: Optional[dict] = None,
    tau: Optional[float] = None,
    equalities: Sequence[StateConstraint] = (),
    tie_tol: float = 0.0,
) -> ConstraintSet:
    """Assemble box limits for every stage and containment for every region.

    ``regions``/``geoms`` map a stage index to its free region and link body.
    """
    cs = ConstraintSet()
    for k in range(1, spec.num_stages + 1):
        cs.control.extend(control_box_constraints(k, obs, limits, dt))
    regions = regions or {}
    geoms = geoms or {}
    for k in sorted(regions):
        fn = containment_fn(geoms[k], regions[k], tau, tie_tol)
        cs.state.append(StateConstraint(k, fn, CONTAINMENT, value_fn=containment_value_fn(geoms[k], regions[k], tau)))
    cs.state.extend(equalities)
    return cs
