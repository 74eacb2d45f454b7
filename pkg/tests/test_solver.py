import math

import numpy as np
import pytest

from spatialchain.chain import StageModel
from spatialchain.costs import (
    BOX_CONTROL,
    CONTAINMENT,
    ConstraintSet,
    ControlConstraint,
    CostWeights,
    ReferenceSet,
    StateConstraint,
    build_constraints,
)
from spatialchain.geometry import LinkPose
from spatialchain.robot import default_robot
from spatialchain.solver import (
    ALState,
    SolverConfig,
    SpatialProblem,
    _Layout,
    _objective,
    _phi,
    _rollout,
    backward_pass,
    forward_pass,
    outer_update,
    solve,
)

EYE = np.eye(3)
ZERO = np.zeros(3)
EE = StageModel(False, None, EYE, ZERO, 1.0)
POS_Q = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])


def prismatic_problem(axes, refs, Q, R, dt=0.1, constraints=None, u0=None):
    models = [StageModel(True, np.asarray(a, float) / np.linalg.norm(a), EYE, ZERO, dt) for a in axes]
    models.append(EE)
    n = len(axes)
    tracks = [None] * (n + 2)
    for k, (ref, q) in enumerate(zip(refs, Q), start=1):
        if ref is not None:
            tracks[k] = (LinkPose.make(ref), q * POS_Q)
    return SpatialProblem(
        EYE.copy(),
        np.zeros(3),
        models,
        tracks,
        np.asarray(R, float),
        constraints or ConstraintSet(),
        np.zeros(n) if u0 is None else np.asarray(u0, float),
    )


def test_single_stage_lqr():
    p = prismatic_problem([[1, 0, 0]], [(1, 0, 0)], [1.0], [0.1])
    rep = solve(p)
    assert rep.status == "converged"
    assert rep.controls[0] == pytest.approx(0.1 / 0.11, abs=1e-8)
    assert rep.inner_iterations == 1


def test_clamped_single_stage():
    cons = ConstraintSet([ControlConstraint(1, 1.0, -0.5, BOX_CONTROL)])
    p = prismatic_problem([[1, 0, 0]], [(1, 0, 0)], [1.0], [0.1], constraints=cons)
    rep = solve(p)
    assert rep.status == "converged"
    assert rep.controls[0] == pytest.approx(0.5, abs=1e-4)
    assert rep.max_violation <= 1e-4


def _least_squares_optimum(axes, refs, Q, R, dt):
    n = len(axes)
    B = np.array([np.asarray(a, float) / np.linalg.norm(a) * dt for a in axes])
    rows, rhs = [], []
    for k in range(n):
        if refs[k] is None:
            continue
        M = np.zeros((3, n))
        M[:, : k + 1] = B[: k + 1].T
        rows.append(math.sqrt(Q[k]) * M)
        rhs.append(math.sqrt(Q[k]) * np.asarray(refs[k], float))
    rows.append(np.diag(np.sqrt(R)))
    rhs.append(np.zeros(n))
    return np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)[0]


def _riccati_gains(axes, Q, refs, R, dt, x_nom):
    """Independent position-only LQR recursion around ``u = 0``."""
    n = len(axes)
    b = [np.asarray(a, float) / np.linalg.norm(a) * dt for a in axes]
    P = 2.0 * Q[n - 1] * EYE if refs[n - 1] is not None else np.zeros((3, 3))
    v = 2.0 * Q[n - 1] * (x_nom[n] - refs[n - 1]) if refs[n - 1] is not None else np.zeros(3)
    ks, Ks = np.zeros(n), np.zeros((n, 3))
    for k in range(n, 0, -1):
        Quu = 2.0 * R[k - 1] + b[k - 1] @ P @ b[k - 1]
        Qux = b[k - 1] @ P
        Qu = b[k - 1] @ v
        ks[k - 1] = -Qu / Quu
        Ks[k - 1] = -Qux / Quu
        P = P - np.outer(Qux, Qux) / Quu
        v = v + Qux * ks[k - 1]
        if k > 1 and refs[k - 2] is not None:
            P = P + 2.0 * Q[k - 2] * EYE
            v = v + 2.0 * Q[k - 2] * (x_nom[k - 1] - refs[k - 2])
    return ks, Ks


def test_lqr_equivalence_and_riccati(rng):
    for _ in range(20):
        n = int(rng.integers(2, 6))
        axes = rng.normal(size=(n, 3))
        refs = [rng.uniform(-1, 1, 3) if rng.random() < 0.7 else None for _ in range(n)]
        refs[-1] = rng.uniform(-1, 1, 3)
        Q = rng.uniform(0.5, 5, n)
        R = rng.uniform(0.05, 1, n)
        p = prismatic_problem(axes, refs, Q, R)
        rep = solve(p)
        assert rep.status == "converged"
        assert rep.inner_iterations == 1
        want = _least_squares_optimum(axes, refs, Q, R, 0.1)
        assert np.max(np.abs(rep.controls - want)) <= 1e-8
        Rs, ps = _rollout(p, p.u_init)
        bp = backward_pass(p, Rs, ps, p.u_init, ALState.initial(p.constraints))
        ks, Ks = _riccati_gains(axes, Q, refs, R, 0.1, ps)
        assert np.max(np.abs(bp.k - ks)) <= 1e-10
        assert np.max(np.abs(bp.K[:, :3] - Ks)) <= 1e-10


def test_optimum_at_start():
    robot = default_robot()
    obs = robot.observe(LinkPose.make((0, 0, 0.15)), np.array([0.1, 0.4, -0.3, 0.2, 0.1, 0.0]))
    w = CostWeights(np.full(6, 5.0), np.ones((robot.num_stages, 6)), np.full(robot.num_stages, 0.1))
    from spatialchain.chain import end_effector_pose

    refs = ReferenceSet(tuple(obs.link_poses_t), end_effector_pose(obs.link_poses_t[-1], robot.spec))
    p = SpatialProblem.from_chain(obs, robot.spec, 0.1, w, refs)
    rep = solve(p)
    assert rep.status == "converged"
    assert np.allclose(rep.controls, 0.0) and rep.inner_iterations == 0


def test_phi_dead_zone_and_active():
    assert _phi(-0.3, 0.0, 10.0, False) == (0.0, 0.0, 0.0)
    v, d1, d2 = _phi(0.2, 0.5, 2.0, False)
    assert d1 == pytest.approx(0.5 + 2.0 * 0.2) and d2 == 2.0
    h = 1e-6
    fd = (_phi(0.2 + h, 0.5, 2.0, False)[0] - _phi(0.2 - h, 0.5, 2.0, False)[0]) / (2 * h)
    assert fd == pytest.approx(d1, rel=1e-8)
    v, d1, d2 = _phi(0.2, 0.5, 2.0, True)
    assert v == pytest.approx(0.5 * 0.2 + 0.04) and d1 == pytest.approx(0.9)


def _constrained(active):
    bias = -0.5 if active else -5.0
    cons = ConstraintSet([ControlConstraint(1, 1.0, bias, BOX_CONTROL)])
    return prismatic_problem([[1, 0, 0], [0, 1, 0]], [None, (1, 1, 0)], [1.0, 1.0], [0.1, 0.1], constraints=cons)


def test_inactive_constraint_contributes_nothing():
    free = prismatic_problem([[1, 0, 0], [0, 1, 0]], [None, (1, 1, 0)], [1.0, 1.0], [0.1, 0.1])
    p = _constrained(False)
    Rs, ps = _rollout(p, p.u_init)
    b0 = backward_pass(free, Rs, ps, free.u_init, ALState.initial(free.constraints))
    b1 = backward_pass(p, Rs, ps, p.u_init, ALState.initial(p.constraints, 10.0))
    assert np.array_equal(b0.k, b1.k) and np.array_equal(b0.K, b1.K)


def test_active_state_constraint_gradient():
    # c(p) = p_x - 0.05 at stage 1 output with lam + mu c > 0
    def fn(R, p):
        return p[0] - 0.05, np.array([1.0, 0, 0, 0, 0, 0])

    cons = ConstraintSet([], [StateConstraint(1, fn, CONTAINMENT)])
    p = prismatic_problem([[1, 0, 0]], [None], [0.0], [0.1], constraints=cons, u0=[1.0])
    Rs, ps = _rollout(p, p.u_init)
    al = ALState(np.array([0.3]), {CONTAINMENT: 2.0})
    bp = backward_pass(p, Rs, ps, p.u_init, al)
    c = 0.1 - 0.05
    Qu = 2 * 0.1 * 1.0 + (0.3 + 2.0 * c) * 0.1
    Quu = 2 * 0.1 + 2.0 * 0.01
    assert bp.k[0] == pytest.approx(-Qu / Quu, rel=1e-12)
    layout = _Layout(p)

    def L(u):
        Rs, ps = _rollout(p, np.array([u]))
        return _objective(p, layout, Rs, ps, np.array([u]), al.lam, np.array([2.0]))[0]

    h = 1e-6
    assert (L(1 + h) - L(1 - h)) / (2 * h) == pytest.approx(Qu, rel=1e-6)


def test_outer_update_examples():
    tags = [BOX_CONTROL]
    al = ALState(np.zeros(1), {BOX_CONTROL: 1.0})
    assert outer_update(al, np.array([-0.2]), tags).lam[0] == 0.0
    al1 = outer_update(al, np.array([0.5]), tags)
    assert al1.lam[0] == pytest.approx(0.5)
    al2 = outer_update(al1, np.array([0.5]), tags)
    assert al2.mu[BOX_CONTROL] == 10.0
    al3 = outer_update(al2, np.array([0.01]), tags)
    assert al3.mu[BOX_CONTROL] == 10.0
    big = ALState(np.zeros(1), {BOX_CONTROL: 5e7}, {BOX_CONTROL: 1.0})
    assert outer_update(big, np.array([1.0]), tags).mu[BOX_CONTROL] == 1e8


def test_forward_pass_quadratic_exact():
    p = prismatic_problem([[1, 0, 0]], [(1, 0, 0)], [1.0], [0.1])
    layout = _Layout(p)
    al = ALState.initial(p.constraints)
    Rs, ps = _rollout(p, p.u_init)
    L0 = _objective(p, layout, Rs, ps, p.u_init, al.lam, np.zeros(0))[0]
    bp = backward_pass(p, Rs, ps, p.u_init, al)
    out = forward_pass(p, (Rs, ps, p.u_init, L0), bp, al)
    assert out[-1] == 1.0
    assert L0 - out[3] == pytest.approx(bp.expected_decrease(1.0), rel=1e-10)


def test_forward_pass_zero_gains_fails():
    p = prismatic_problem([[1, 0, 0]], [(1, 0, 0)], [1.0], [0.1])
    al = ALState.initial(p.constraints)
    Rs, ps = _rollout(p, p.u_init)
    bp = backward_pass(p, Rs, ps, p.u_init, al)
    bp.k[:] = 0.0
    bp.K[:] = 0.0
    L0 = _objective(p, _Layout(p), Rs, ps, p.u_init, al.lam, np.zeros(0))[0]
    assert forward_pass(p, (Rs, ps, p.u_init, L0), bp, al) is None


def _robot_problem(seed):
    from spatialchain.containment import LinkGeometry  # noqa: F401
    from spatialchain.free_region import ObstacleCloud, extract_region

    rng = np.random.default_rng(seed)
    robot = default_robot()
    angles = rng.uniform(-0.5, 0.5, 6)
    obs = robot.observe(LinkPose.make((0, 0, 0.15), (0, 0, 0.2, 1.0)), angles)
    pts = rng.uniform([-1, -1, 0], [1.5, 1, 1.2], (200, 3))
    regions, geoms = {}, {}
    for k in robot.constrained_stages():
        seg = robot.skeleton(k, obs.link_poses_t[k - 1])
        try:
            regions[k] = extract_region(seg, ObstacleCloud(pts), robot.region_dims(k, seg))
            geoms[k] = robot.geometry(k)
        except Exception:
            pass
    cons = build_constraints(obs, robot.spec, robot.limits, 0.1, regions, geoms)
    from spatialchain.costs import default_weights
    from spatialchain.chain import end_effector_pose

    ee = end_effector_pose(obs.link_poses_t[-1], robot.spec)
    goal = LinkPose(ee.p + rng.uniform(-0.3, 0.3, 3), ee.r)
    refs = ReferenceSet((None, None, LinkPose.make(obs.base_pose_t.p + [0.3, 0, 0], obs.base_pose_t.r)), goal)
    return SpatialProblem.from_chain(obs, robot.spec, 0.1, default_weights(robot.num_stages), refs, cons)


def test_determinism():
    a = solve(_robot_problem(3))
    b = solve(_robot_problem(3))
    assert np.array_equal(a.controls, b.controls)
    assert np.array_equal(a.feedback, b.feedback)
    assert a.cost == b.cost and a.status == b.status


def test_monotone_inner_descent_and_finite_gains():
    import spatialchain.solver as solver_mod

    seen = []
    original = solver_mod.forward_pass

    def spy(problem, nominal, bp, al, cfg=SolverConfig(), layout=None):
        out = original(problem, nominal, bp, al, cfg, layout)
        if out is not None:
            seen.append((nominal[3], out[3]))
        return out

    solver_mod.forward_pass = spy
    try:
        for seed in range(5):
            rep = solve(_robot_problem(seed))
            if rep.converged:
                assert np.all(np.isfinite(rep.feedback))
                assert rep.max_violation <= 1e-4
    finally:
        solver_mod.forward_pass = original
    assert seen
    assert all(after <= before for before, after in seen)


def test_nan_reports_numerical_failure():
    def fn(R, p):
        return float("nan"), np.zeros(6)

    cons = ConstraintSet([], [StateConstraint(1, fn, CONTAINMENT)])
    p = prismatic_problem([[1, 0, 0]], [(1, 0, 0)], [1.0], [0.1], constraints=cons)
    assert solve(p).status == "numerical_failure"
