import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from spatialchain.containment import (
    InvalidRegionError,
    LinkGeometry,
    _min_norm_combination,
    min_scaling,
    scaling_gradient,
    scaling_rp,
    scaling_value_rp,
    smoothed_scaling,
)
from spatialchain.free_region import BOX_NORMALS, FreeRegion, contains_point
from spatialchain.geometry import LinkPose, apply_tangent, quat_to_matrix

from .conftest import central_diff, random_pose, rel_err

CUBE = LinkGeometry.box([-0.5] * 3, [0.5] * 3)
REGION = FreeRegion(BOX_NORMALS.copy(), np.ones(6), np.zeros(3))


def test_cube_in_cube():
    res = min_scaling(CUBE, LinkPose.identity(), REGION)
    assert res.alpha == pytest.approx(0.5, abs=1e-12)
    # tie-break: face 0 (+x), first vertex attaining it
    assert res.active_face == 0
    assert np.allclose(CUBE.vertices[res.active_vertex][0], 0.5)
    assert np.allclose(res.grad[:3], [1, 0, 0])


def test_cube_translated():
    res = min_scaling(CUBE, LinkPose.make((0.3, 0, 0)), REGION)
    assert res.alpha == pytest.approx(0.8, abs=1e-12)
    assert np.allclose(res.grad[:3], [1, 0, 0])
    v = CUBE.vertices[res.active_vertex]
    assert np.allclose(res.grad[3:], np.cross(v, [1, 0, 0]))
    res = min_scaling(CUBE, LinkPose.make((1.0, 0, 0)), REGION)
    assert res.alpha == pytest.approx(1.5, abs=1e-12)


def test_rejects_bad_region():
    bad = FreeRegion(BOX_NORMALS.copy(), np.ones(6), np.zeros(3))
    object.__setattr__(bad, "offsets", np.array([1, 1, 1, 1, 1, -1.0]))
    with pytest.raises(InvalidRegionError):
        min_scaling(CUBE, LinkPose.identity(), bad)


def test_geometry_validation():
    with pytest.raises(ValueError):
        LinkGeometry(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]]))
    with pytest.raises(ValueError):
        LinkGeometry(np.zeros((3, 3)))


def random_polytope(rng):
    n = int(rng.integers(4, 12))
    return LinkGeometry(rng.uniform(-0.3, 0.3, (n, 3)))


def random_region(rng):
    k = int(rng.integers(0, 8))
    extra = rng.normal(size=(k, 3))
    normals = np.vstack([BOX_NORMALS, extra / np.linalg.norm(extra, axis=1)[:, None]])
    return FreeRegion(normals, rng.uniform(0.2, 1.5, len(normals)), rng.uniform(-1, 1, 3))


def bisection_alpha(geom, pose, region):
    R = quat_to_matrix(pose.r)
    world = geom.vertices @ R.T + pose.p

    def ok(a):
        return all(contains_point(region, w, a) for w in world)

    lo, hi = 0.0, 1.0
    while not ok(hi):
        hi *= 2.0
    if np.max((world - region.center) @ region.normals.T) <= 0:
        return 0.0  # every vertex on the centre side of every face
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-13:
            break
    return hi


def test_bisection_oracle_500(rng):
    for _ in range(500):
        geom = random_polytope(rng)
        pose = random_pose(rng, 1.0)
        region = random_region(rng)
        a = min_scaling(geom, pose, region).alpha
        assert abs(a - bisection_alpha(geom, pose, region)) <= 1e-9


def test_certificate_exact(rng):
    for _ in range(300):
        geom = random_polytope(rng)
        pose = random_pose(rng, 0.8)
        region = random_region(rng)
        a = min_scaling(geom, pose, region).alpha
        world = geom.vertices @ quat_to_matrix(pose.r).T + pose.p
        direct = all(contains_point(region, w, 1.0) for w in world)
        assert (a <= 1.0) == direct


def test_gradient_fd(rng):
    for _ in range(200):
        geom = random_polytope(rng)
        pose = random_pose(rng, 0.8)
        region = random_region(rng)
        g = scaling_gradient(geom, pose, region)
        g_fd = central_diff(lambda d: min_scaling(geom, apply_tangent(pose, d), region).alpha, np.zeros(6))
        assert rel_err(g, g_fd.ravel()) <= 1e-4


def test_gradient_near_tie_matches_perturbed():
    pose = LinkPose.make((1e-3, 0, 0))
    g = scaling_gradient(CUBE, pose, REGION)
    g_fd = central_diff(lambda d: min_scaling(CUBE, LinkPose(pose.p + d, pose.r), REGION).alpha, np.zeros(3))
    assert np.allclose(g[:3], g_fd.ravel(), atol=1e-6)
    assert np.allclose(g[:3], [1, 0, 0])


def test_rigid_invariance(rng):
    for _ in range(200):
        geom = random_polytope(rng)
        pose = random_pose(rng, 0.8)
        region = random_region(rng)
        Q = Rotation.random(random_state=rng.integers(1 << 31)).as_matrix()
        t = rng.uniform(-2, 2, 3)
        moved_pose = LinkPose(Q @ pose.p + t, _mat_quat(Q @ quat_to_matrix(pose.r)))
        moved_region = FreeRegion(region.normals @ Q.T, region.offsets, Q @ region.center + t)
        a = min_scaling(geom, pose, region).alpha
        b = min_scaling(geom, moved_pose, moved_region).alpha
        assert abs(a - b) <= 1e-9


def _mat_quat(R):
    from spatialchain.geometry import matrix_to_quat

    return matrix_to_quat(R)


def test_homogeneity(rng):
    for _ in range(100):
        geom = random_polytope(rng)
        pose = random_pose(rng, 0.8)
        region = random_region(rng)
        s = float(rng.uniform(0.2, 5.0))
        r1 = min_scaling(geom, pose, region)
        scaled = FreeRegion(region.normals, s * region.offsets, region.center)
        r2 = min_scaling(geom, pose, scaled)
        assert r2.alpha == pytest.approx(r1.alpha / s, rel=1e-12, abs=1e-15)
        assert np.allclose(r2.grad, r1.grad / s, atol=1e-13)


def test_smoothing_bounds():
    pose = LinkPose.make((0.3, 0, 0))
    count = len(CUBE.vertices) * REGION.num_faces
    for tau in (1e-1, 1e-2, 1e-3, 1e-4):
        a_s, _ = smoothed_scaling(CUBE, pose, REGION, tau)
        assert 0.8 <= a_s <= 0.8 + tau * math.log(count) + 1e-12


def test_smoothing_tetrahedron():
    tet = LinkGeometry(np.array([[0.9, 0, 0], [0, 0.1, 0], [0, 0, 0.1], [-0.1, -0.1, -0.1]]))
    tau = 0.05
    a = min_scaling(tet, LinkPose.identity(), REGION).alpha
    a_s, _ = smoothed_scaling(tet, LinkPose.identity(), REGION, tau)
    assert a == pytest.approx(0.9)
    assert 0 <= a_s - a <= tau * math.log(4 * 6)


def test_smoothed_gradient_fd(rng):
    for _ in range(50):
        geom = random_polytope(rng)
        pose = random_pose(rng, 0.8)
        region = random_region(rng)
        _, g = smoothed_scaling(geom, pose, region, 0.1)
        g_fd = central_diff(
            lambda d: smoothed_scaling(geom, apply_tangent(pose, d), region, 0.1)[0], np.zeros(6), h=1e-5
        )
        assert rel_err(g, g_fd.ravel()) <= 1e-6


def test_smoothing_rejects_tau():
    with pytest.raises(ValueError):
        smoothed_scaling(CUBE, LinkPose.identity(), REGION, 0.0)


def test_min_norm_combination_properties(rng):
    for _ in range(100):
        pieces = rng.normal(size=(int(rng.integers(2, 8)), 6))
        g = _min_norm_combination(pieces)
        # closest hull point: every piece has at least |g|^2 along g
        assert np.all(pieces @ g >= g @ g - 1e-6)
        w = np.linalg.lstsq(pieces.T, g, rcond=None)[0]
        assert np.linalg.norm(pieces.T @ w - g) <= 1e-6 * max(1.0, np.linalg.norm(g))


def test_min_norm_opposite_pieces_cancel():
    g = _min_norm_combination(np.array([[1.0, 0, 0, 0, 0, 0], [-1.0, 0, 0, 0, 0, 0]]))
    assert np.allclose(g, 0.0, atol=1e-9)


def test_tied_gradient_keeps_exact_value():
    pose = LinkPose.make((0.2, 0, 0))
    R = quat_to_matrix(pose.r)
    exact = scaling_rp(CUBE.vertices, R, pose.p, REGION)
    tied = scaling_rp(CUBE.vertices, R, pose.p, REGION, tie_tol=1e-3)
    assert tied[0] == exact[0] == scaling_value_rp(CUBE.vertices, R, pose.p, REGION)
    # four vertices on the +x face: the rotation parts cancel
    assert np.allclose(tied[1], [1.0, 0, 0, 0, 0, 0], atol=1e-9)
