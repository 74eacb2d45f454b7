"""Minimum scaling of a free region that still contains a convex link.

For a link given by the convex hull of its vertices ``v_i`` (body frame) at
pose ``(R, p)``, and a region ``(F, g, c)``, the link lies inside the region
scaled by ``alpha`` iff every vertex satisfies every face inequality, so::

    alpha = max_ij  F_j · (R v_i + p - c) / g_j

``alpha <= 1`` certifies containment exactly. The gradient with respect to
the 6-D pose tangent at the active pair is ``[F_j, (R v_i) x F_j] / g_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .free_region import FreeRegion
from .geometry import LinkPose, cross, quat_to_matrix


class InvalidRegionError(ValueError):
    pass


@dataclass(frozen=True)
class LinkGeometry:
    """Convex link body given by hull vertices in the link frame."""

    vertices: np.ndarray
    _hull: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) < 4:
            raise ValueError("link geometry needs at least four 3-D vertices")
        if np.linalg.matrix_rank(v[1:] - v[0], tol=1e-9) < 3:
            raise ValueError("link geometry vertices are coplanar")
        object.__setattr__(self, "vertices", v)

    @classmethod
    def box(cls, lo, hi) -> LinkGeometry:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        corners = [[(lo, hi)[i][0], (lo, hi)[j][1], (lo, hi)[k][2]] for i in (0, 1) for j in (0, 1) for k in (0, 1)]
        return cls(np.array(corners))

    def hull(self):
        """Cached ``(facet normals, edge directions)`` of the convex hull."""
        if not self._hull:
            from scipy.spatial import ConvexHull

            ch = ConvexHull(self.vertices)
            normals = _unique_directions(ch.equations[:, :3])
            edges = []
            for simplex in ch.simplices:
                for i in range(3):
                    edges.append(self.vertices[simplex[(i + 1) % 3]] - self.vertices[simplex[i]])
            edges = np.array(edges)
            edges /= np.linalg.norm(edges, axis=1)[:, None]
            self._hull["normals"] = normals
            self._hull["edges"] = _unique_directions(edges)
        return self._hull["normals"], self._hull["edges"]


def _unique_directions(vectors: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    out = []
    for v in vectors:
        if not any(abs(abs(float(v @ w)) - 1.0) < tol for w in out):
            out.append(v)
    return np.array(out)


@dataclass(frozen=True)
class ScalingResult:
    alpha: float
    active_vertex: int
    active_face: int
    grad: np.ndarray


def _ratios(vertices: np.ndarray, R: np.ndarray, p: np.ndarray, region: FreeRegion):
    if np.any(region.offsets <= 0.0):
        raise InvalidRegionError("region offsets must be strictly positive")
    world = vertices @ R.T
    # faces x vertices so that argmax order is (face, vertex)
    ratios = (region.normals @ (world + (p - region.center)).T) / region.offsets[:, None]
    return world, ratios


def _min_norm_combination(pieces: np.ndarray) -> np.ndarray:
    """Smallest-norm point in the convex hull of the rows of ``pieces``.

    Its negative decreases every piece to first order, unlike the plain
    mean. Solved as NNLS with the simplex sum enforced by a heavy row.
    """
    pieces = np.unique(pieces, axis=0)
    if len(pieces) == 1:
        return pieces[0].copy()
    rho = 1e3 * max(1.0, float(np.abs(pieces).max()))
    A = np.vstack([pieces.T, np.full((1, len(pieces)), rho)])
    b = np.zeros(7)
    b[6] = rho
    w, _ = nnls(A, b)
    return (w / w.sum()) @ pieces


def scaling_rp(vertices: np.ndarray, R: np.ndarray, p: np.ndarray, region: FreeRegion, tie_tol: float = 0.0):
    """``(alpha, grad, vertex, face)`` for a pose given as rotation matrix and position.

    With ``tie_tol > 0`` the gradient is the smallest-norm convex combination
    of the gradients of every pair whose ratio is within ``tie_tol`` of the
    maximum, which keeps the solver's local model stable when a face of the
    link lies flat against a face of the region.
    """
    world, ratios = _ratios(vertices, R, p, region)
    idx = int(np.argmax(ratios))
    j, i = divmod(idx, ratios.shape[1])
    alpha = float(ratios[j, i])
    grad = np.empty(6)
    if tie_tol > 0.0:
        faces, verts = np.nonzero(ratios >= alpha - tie_tol)
        if len(faces) > 1:
            Fg = region.normals[faces] / region.offsets[faces, None]
            w = world[verts]
            pieces = np.empty((len(faces), 6))
            pieces[:, :3] = Fg
            pieces[:, 3] = w[:, 1] * Fg[:, 2] - w[:, 2] * Fg[:, 1]
            pieces[:, 4] = w[:, 2] * Fg[:, 0] - w[:, 0] * Fg[:, 2]
            pieces[:, 5] = w[:, 0] * Fg[:, 1] - w[:, 1] * Fg[:, 0]
            return alpha, _min_norm_combination(pieces), i, j
    F = region.normals[j]
    g = region.offsets[j]
    grad[:3] = F / g
    grad[3:] = cross(world[i], F) / g
    return alpha, grad, i, j


def scaling_value_rp(vertices: np.ndarray, R: np.ndarray, p: np.ndarray, region: FreeRegion) -> float:
    """``alpha`` alone, for callers that do not need the gradient."""
    return float(_ratios(vertices, R, p, region)[1].max())


def min_scaling(geom: LinkGeometry, pose: LinkPose, region: FreeRegion) -> ScalingResult:
    """Smallest uniform scaling of ``region`` that contains the posed link."""
    alpha, grad, i, j = scaling_rp(geom.vertices, quat_to_matrix(pose.r), np.asarray(pose.p, float), region)
    return ScalingResult(alpha, i, j, grad)


def scaling_gradient(geom: LinkGeometry, pose: LinkPose, region: FreeRegion) -> np.ndarray:
    """Gradient of ``alpha`` w.r.t. ``[dp, dtheta]`` at the tie-broken active pair."""
    return min_scaling(geom, pose, region).grad


def smoothed_rp(vertices: np.ndarray, R: np.ndarray, p: np.ndarray, region: FreeRegion, tau: float):
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    world, ratios = _ratios(vertices, R, p, region)
    top = ratios.max()
    w = np.exp((ratios - top) / tau)
    total = w.sum()
    alpha_s = top + tau * np.log(total)
    w /= total
    # d ratio_ji / dp = F_j / g_j ; d/dtheta = (R v_i) x F_j / g_j
    Fg = region.normals / region.offsets[:, None]
    face_w = w.sum(axis=1)
    grad = np.empty(6)
    grad[:3] = face_w @ Fg
    # sum_ji w_ji (world_i x Fg_j) = sum_i world_i x (sum_j w_ji Fg_j)
    mixed = w.T @ Fg
    grad[3:] = np.cross(world, mixed).sum(axis=0)
    return float(alpha_s), grad


def smoothed_scaling(geom: LinkGeometry, pose: LinkPose, region: FreeRegion, tau: float):
    """Log-sum-exp upper bound of ``alpha`` and its exact gradient."""
    return smoothed_rp(geom.vertices, quat_to_matrix(pose.r), np.asarray(pose.p, float), region, tau)
