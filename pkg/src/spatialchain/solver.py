"""Augmented-Lagrangian DDP over the spatial (link-indexed) horizon.

The "time" index of the recursion is the position along the kinematic
chain: stage ``k`` maps the pose of link ``k-1`` to the pose of link ``k``
under the scalar control ``u_k``. The state is a pose, linearized in the
6-D world-frame tangent, so ``A`` is 6x6 and ``B`` is 6x1.

Inequalities ``c <= 0`` enter through the PHR term
``(max(0, lam + mu c)^2 - lam^2) / (2 mu)``; equalities through
``lam c + mu c^2 / 2``. An outer loop updates ``lam`` and ``mu``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chain import ChainObservation, ChainSpec, ChainTrajectory, StageModel, stage_models
from .costs import ConstraintSet, CostWeights, ReferenceSet, tracking_terms
from .geometry import LinkPose, _quat_error, matrix_log, matrix_to_quat, pose_to_transform

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"
LINE_SEARCH_FAILED = "line_search_failed"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverConfig:
    tol_con: float = 1e-4
    tol_grad: float = 1e-6
    max_inner: int = 100
    max_outer: int = 30
    mu0: float = 1.0
    beta: float = 10.0
    mu_max: float = 1e8
    reg0: float = 1e-6
    reg_factor: float = 10.0
    reg_max: float = 1e6
    smooth_alpha_tau: float = 0.0
    # containment gradient averages vertex/face pairs this close to the max
    tie_tol: float = 1e-3
    armijo: float = 1e-4
    ls_steps: int = 11
    # relative objective change below which an inner loop is stationary
    tol_decrease: float = 1e-12


@dataclass
class ALState:
    """Multipliers per scalar constraint and one penalty per constraint group."""

    lam: np.ndarray
    mu: dict
    prev_violation: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, constraints: ConstraintSet, mu0: float = 1.0) -> ALState:
        return cls(np.zeros(len(constraints)), {tag: mu0 for tag in set(constraints.tags())})

    def mu_vector(self, tags) -> np.ndarray:
        return np.array([self.mu[t] for t in tags], dtype=float)


@dataclass
class SolveReport:
    controls: np.ndarray
    trajectory: ChainTrajectory
    outer_iterations: int
    inner_iterations: int
    max_violation: float
    cost: float
    status: str
    feedback: np.ndarray
    constraint_values: np.ndarray
    al_state: Optional[ALState] = None

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


@dataclass
class SpatialProblem:
    """Everything one control step optimizes.

    ``models`` holds ``N`` controlled stages followed by the control-free
    end-effector stage. ``tracks[k]`` is ``(ref pose, Q diag)`` or ``None``
    for the pose produced by stage ``k`` (``k = 1..N+1``; index 0 unused).
    """

    R0: np.ndarray
    p0: np.ndarray
    models: list
    tracks: list
    r_weights: np.ndarray
    constraints: ConstraintSet
    u_init: np.ndarray

    @property
    def num_stages(self) -> int:
        return len(self.models) - 1

    @classmethod
    def from_chain(
        cls,
        obs: ChainObservation,
        spec: ChainSpec,
        dt: float,
        weights: CostWeights,
        refs: ReferenceSet,
        constraints: Optional[ConstraintSet] = None,
        u_init=None,
    ) -> SpatialProblem:
        N = spec.num_stages
        tracks = [None] * (N + 2)
        for k in range(1, N + 1):
            ref = refs.link(k)
            if ref is not None and np.any(weights.Q_stage[k - 1] > 0):
                tracks[k] = (ref, weights.Q_stage[k - 1])
        if refs.ee is not None and np.any(weights.Q_terminal > 0):
            tracks[N + 1] = (refs.ee, weights.Q_terminal)
        T0 = pose_to_transform(obs.base_pose_t)
        u0 = np.zeros(N) if u_init is None else np.asarray(u_init, dtype=float).copy()
        return cls(
            T0.rotation,
            T0.translation,
            stage_models(obs, dt, spec),
            tracks,
            np.asarray(weights.R_stage, dtype=float),
            constraints if constraints is not None else ConstraintSet(),
            u0,
        )


# ----------------------------------------------------------------------------
# internal evaluation helpers
# ----------------------------------------------------------------------------


class _Layout:
    """Constraint bookkeeping grouped by stage."""

    def __init__(self, problem: SpatialProblem):
        cs = problem.constraints
        N = problem.num_stages
        self.tags = cs.tags()
        self.n = len(cs)
        self.nc = len(cs.control)
        self.ctrl = [[] for _ in range(N + 1)]
        for i, c in enumerate(cs.control):
            self.ctrl[c.stage].append((i, c.coef, c.bias))
        self.state = [[] for _ in range(N + 2)]
        self.equality = np.zeros(self.n, dtype=bool)
        for j, c in enumerate(cs.state):
            self.state[c.stage].append((self.nc + j, c))
            self.equality[self.nc + j] = c.equality


def _rollout(problem: SpatialProblem, u: np.ndarray):
    Rs = [problem.R0]
    ps = [problem.p0]
    R, p = problem.R0, problem.p0
    for model, uk in zip(problem.models, list(u) + [0.0]):
        R, p = model.step(R, p, uk)
        Rs.append(R)
        ps.append(p)
    return Rs, ps


def _phi(c: float, lam: float, mu: float, eq: bool):
    """AL penalty value, first and second derivative with respect to ``c``."""
    if eq:
        return lam * c + 0.5 * mu * c * c, lam + mu * c, mu
    s = lam + mu * c
    if s > 0.0:
        return (s * s - lam * lam) / (2.0 * mu), s, mu
    return -lam * lam / (2.0 * mu), 0.0, 0.0


def _constraint_values(problem, layout, Rs, ps, u) -> np.ndarray:
    c = np.empty(layout.n)
    for k in range(1, problem.num_stages + 1):
        for i, coef, bias in layout.ctrl[k]:
            c[i] = coef * u[k - 1] + bias
    for k in range(1, problem.num_stages + 2):
        for i, con in layout.state[k]:
            c[i] = con.value(Rs[k], ps[k])
    return c


def _objective(problem, layout, Rs, ps, u, lam, mu):
    """AL objective, plain cost and constraint values of a rollout."""
    cost = float(np.sum(problem.r_weights * u * u))
    for k in range(1, problem.num_stages + 2):
        tr = problem.tracks[k]
        if tr is not None:
            cost += _track_value(Rs[k], ps[k], tr)
    c = _constraint_values(problem, layout, Rs, ps, u)
    total = cost
    for i in range(layout.n):
        total += _phi(c[i], lam[i], mu[i], layout.equality[i])[0]
    return total, cost, c


def _track_value(R, p, track) -> float:
    ref, Q = track
    e = np.empty(6)
    e[:3] = p - ref.p
    e[3:] = _quat_error(matrix_to_quat(R), ref.r)
    return float(e @ (Q * e))


def _state_terms(problem, layout, k, R, p, lam, mu, c):
    """Gradient and Gauss-Newton Hessian of every state-only term at pose ``k``."""
    gx = np.zeros(6)
    Hxx = np.zeros((6, 6))
    tr = problem.tracks[k]
    if tr is not None:
        _, g, H = tracking_terms(R, p, tr[0], tr[1])
        gx += g
        Hxx += H
    for i, con in layout.state[k]:
        ci, gc = con.fn(R, p)
        _, d1, d2 = _phi(ci, lam[i], mu[i], layout.equality[i])
        if d1 != 0.0 or d2 != 0.0:
            gx += d1 * gc
            Hxx += d2 * np.outer(gc, gc)
    return gx, Hxx


def _violation(c: np.ndarray, equality: np.ndarray) -> float:
    if len(c) == 0:
        return 0.0
    v = np.where(equality, np.abs(c), np.maximum(c, 0.0))
    return float(v.max())


# ----------------------------------------------------------------------------
# passes
# ----------------------------------------------------------------------------


@dataclass
class BackwardResult:
    k: np.ndarray
    K: np.ndarray
    dV1: float
    dV2: float
    grad_norm: float

    def expected_decrease(self, step: float) -> float:
        return -(step * self.dV1 + step * step * self.dV2)


def backward_pass(problem: SpatialProblem, Rs, ps, u, al: ALState, reg: float = 0.0, layout=None):
    """Riccati-style recursion over the chain.

    Returns a :class:`BackwardResult`, or ``None`` when some ``Q_uu`` is not
    positive after regularization.
    """
    layout = layout or _Layout(problem)
    lam = al.lam
    mu = al.mu_vector(layout.tags)
    N = problem.num_stages
    Vx, Vxx = _state_terms(problem, layout, N + 1, Rs[N + 1], ps[N + 1], lam, mu, None)
    # end-effector stage carries no control
    A, _ = problem.models[N].jacobians(Rs[N], ps[N], 0.0, ps[N + 1])
    Vx = A.T @ Vx
    Vxx = A.T @ Vxx @ A
    gx, Hxx = _state_terms(problem, layout, N, Rs[N], ps[N], lam, mu, None)
    Vx += gx
    Vxx += Hxx
    kff = np.zeros(N)
    K = np.zeros((N, 6))
    dV1 = 0.0
    dV2 = 0.0
    grad_norm = 0.0
    for k in range(N, 0, -1):
        uk = u[k - 1]
        A, B = problem.models[k - 1].jacobians(Rs[k - 1], ps[k - 1], uk, ps[k])
        rw = problem.r_weights[k - 1]
        lu = 2.0 * rw * uk
        luu = 2.0 * rw
        for i, coef, bias in layout.ctrl[k]:
            _, d1, d2 = _phi(coef * uk + bias, lam[i], mu[i], layout.equality[i])
            lu += d1 * coef
            luu += d2 * coef * coef
        VxxA = Vxx @ A
        Qx = A.T @ Vx
        Qu = lu + B @ Vx
        Qxx = A.T @ VxxA
        Qux = B @ VxxA
        Quu = luu + B @ Vxx @ B
        Quu_r = Quu + reg
        if not Quu_r > 0.0:
            return None
        kk = -Qu / Quu_r
        KK = -Qux / Quu_r
        kff[k - 1] = kk
        K[k - 1] = KK
        dV1 += kk * Qu
        dV2 += 0.5 * kk * kk * Quu
        grad_norm = max(grad_norm, abs(Qu))
        Vx = Qx + KK * (Quu * kk + Qu) + Qux * kk
        Vxx = Qxx + Quu * np.outer(KK, KK) + np.outer(KK, Qux) + np.outer(Qux, KK)
        Vxx = 0.5 * (Vxx + Vxx.T)
        if k > 1:
            gx, Hxx = _state_terms(problem, layout, k - 1, Rs[k - 1], ps[k - 1], lam, mu, None)
            Vx = Vx + gx
            Vxx = Vxx + Hxx
    return BackwardResult(kff, K, dV1, dV2, grad_norm)


def _tangent(R, p, R_nom, p_nom) -> np.ndarray:
    d = np.empty(6)
    d[:3] = p - p_nom
    d[3:] = matrix_log(R @ R_nom.T)
    return d


def _policy_rollout(problem, Rs, ps, u, bp: BackwardResult, step: float):
    R, p = problem.R0, problem.p0
    new_R = [R]
    new_p = [p]
    new_u = np.empty_like(u)
    for k in range(1, problem.num_stages + 1):
        du = step * bp.k[k - 1]
        if k > 1:
            du += bp.K[k - 1] @ _tangent(R, p, Rs[k - 1], ps[k - 1])
        uk = u[k - 1] + du
        new_u[k - 1] = uk
        R, p = problem.models[k - 1].step(R, p, uk)
        new_R.append(R)
        new_p.append(p)
    R, p = problem.models[-1].step(R, p, 0.0)
    new_R.append(R)
    new_p.append(p)
    return new_R, new_p, new_u


def forward_pass(problem: SpatialProblem, nominal, bp: BackwardResult, al: ALState, cfg: SolverConfig = SolverConfig(), layout=None):
    """Backtracking line search on the AL objective.

    ``nominal`` is ``(Rs, ps, u, objective)``. Returns the accepted
    ``(Rs, ps, u, objective, cost, c, step)`` or ``None``.
    """
    layout = layout or _Layout(problem)
    Rs, ps, u, L0 = nominal
    mu = al.mu_vector(layout.tags)
    step = 1.0
    for _ in range(cfg.ls_steps):
        expected = bp.expected_decrease(step)
        nR, np_, nu = _policy_rollout(problem, Rs, ps, u, bp, step)
        L, cost, c = _objective(problem, layout, nR, np_, nu, al.lam, mu)
        actual = L0 - L
        if math.isfinite(L) and np.all(np.isfinite(c)) and expected > 0.0 and actual >= cfg.armijo * expected:
            ratio = actual / expected
            if not 0.25 <= ratio <= 4.0:
                log.debug("decrease ratio %.3g outside [0.25, 4] at step %.3g", ratio, step)
            return nR, np_, nu, L, cost, c, step
        step *= 0.5
    return None


def outer_update(al: ALState, c: np.ndarray, tags, equality=None, cfg: SolverConfig = SolverConfig()) -> ALState:
    """Multiplier step and per-group penalty growth."""
    c = np.asarray(c, dtype=float)
    equality = np.zeros(len(c), dtype=bool) if equality is None else np.asarray(equality)
    mu = al.mu_vector(tags)
    lam = al.lam + mu * c
    lam = np.where(equality, lam, np.maximum(lam, 0.0))
    viol = np.where(equality, np.abs(c), np.maximum(c, 0.0))
    new_mu = dict(al.mu)
    prev = dict(al.prev_violation)
    tags = list(tags)
    for tag in set(tags):
        idx = [i for i, t in enumerate(tags) if t == tag]
        v = float(viol[idx].max()) if idx else 0.0
        if v > cfg.tol_con and v > 0.25 * prev.get(tag, math.inf):
            new_mu[tag] = min(cfg.beta * new_mu[tag], cfg.mu_max)
        prev[tag] = v
    return ALState(lam, new_mu, prev)


# ----------------------------------------------------------------------------
# driver
# ----------------------------------------------------------------------------


def _trajectory(Rs, ps) -> ChainTrajectory:
    return ChainTrajectory(tuple(LinkPose(np.array(p), matrix_to_quat(R)) for R, p in zip(Rs[1:], ps[1:])))


def solve(problem: SpatialProblem, cfg: SolverConfig = SolverConfig()) -> SolveReport:
    """Minimize the constrained spatial problem from ``problem.u_init``."""
    layout = _Layout(problem)
    al = ALState.initial(problem.constraints, cfg.mu0)
    u = problem.u_init.astype(float).copy()
    Rs, ps = _rollout(problem, u)
    mu = al.mu_vector(layout.tags)
    L, cost, c = _objective(problem, layout, Rs, ps, u, al.lam, mu)
    K = np.zeros((problem.num_stages, 6))
    inner_total = 0
    status = MAX_ITER
    outer = 0
    if not math.isfinite(L) or not np.all(np.isfinite(c)):
        return _report(u, Rs, ps, 0, 0, c, layout, cost, NUMERICAL_FAILURE, K, al)
    for outer in range(1, cfg.max_outer + 1):
        reg = 0.0
        inner_done = False
        ls_failed = False
        for _ in range(cfg.max_inner):
            bp = backward_pass(problem, Rs, ps, u, al, reg, layout)
            while bp is None and reg < cfg.reg_max:
                reg = max(cfg.reg0, reg * cfg.reg_factor)
                bp = backward_pass(problem, Rs, ps, u, al, reg, layout)
            if bp is None or not np.all(np.isfinite(bp.K)):
                return _report(u, Rs, ps, outer, inner_total, c, layout, cost, NUMERICAL_FAILURE, K, al)
            K = bp.K
            if bp.grad_norm <= cfg.tol_grad or bp.expected_decrease(1.0) <= cfg.tol_decrease * (1.0 + abs(L)):
                inner_done = True
                break
            fp = forward_pass(problem, (Rs, ps, u, L), bp, al, cfg, layout)
            if fp is None:
                if reg >= cfg.reg_max:
                    ls_failed = True
                    break
                reg = max(cfg.reg0, reg * cfg.reg_factor)
                continue
            Rs, ps, u, L_new, cost, c, step = fp
            inner_total += 1
            rel = (L - L_new) / (1.0 + abs(L))
            L = L_new
            if step == 1.0:
                reg = 0.0 if reg <= cfg.reg0 else reg / cfg.reg_factor
            if rel <= cfg.tol_decrease:
                inner_done = True
                break
        viol = _violation(c, layout.equality)
        if inner_done and viol <= cfg.tol_con:
            status = CONVERGED
            break
        if ls_failed:
            status = LINE_SEARCH_FAILED
            if viol <= cfg.tol_con:
                break
        al = outer_update(al, c, layout.tags, layout.equality, cfg)
        mu = al.mu_vector(layout.tags)
        L, cost, c = _objective(problem, layout, Rs, ps, u, al.lam, mu)
        status = MAX_ITER if not ls_failed else status
    return _report(u, Rs, ps, outer, inner_total, c, layout, cost, status, K, al)


def _report(u, Rs, ps, outer, inner, c, layout, cost, status, K, al) -> SolveReport:
    return SolveReport(
        controls=np.array(u),
        trajectory=_trajectory(Rs, ps),
        outer_iterations=outer,
        inner_iterations=inner,
        max_violation=_violation(c, layout.equality),
        cost=float(cost),
        status=status,
        feedback=np.array(K),
        constraint_values=np.array(c),
        al_state=al,
    )
