"""Polytopic free regions grown around link midlines.

A region is ``{x : g - F (x - c) >= 0}`` with unit-norm rows in ``F``, all
offsets ``g > 0`` and a world-axis-aligned frame centred at ``c``. Scaling
by ``alpha`` shrinks or grows it about ``c``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.optimize import linprog

BOX_NORMALS = np.array(
    [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ]
)

MAX_CLIP_PLANES = 20
DEFAULT_MARGIN = 0.01


class SeedInfeasibleError(RuntimeError):
    """The link midline is too close to an obstacle to grow a region."""


@dataclass(frozen=True)
class FreeRegion:
    normals: np.ndarray
    offsets: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        if np.any(self.offsets <= 0.0):
            raise ValueError("free region offsets must be strictly positive")

    @property
    def num_faces(self) -> int:
        return len(self.offsets)

    def world_offsets(self) -> np.ndarray:
        """Offsets ``h`` of the same halfspaces written as ``F x <= h``."""
        return self.offsets + self.normals @ self.center

    def vertices(self) -> np.ndarray:
        """Polytope vertices in world coordinates (for plotting and tests)."""
        from scipy.spatial import HalfspaceIntersection

        hs = np.hstack([self.normals, -self.offsets[:, None]])
        return HalfspaceIntersection(hs, np.zeros(3)).intersections + self.center

    def to_text(self) -> str:
        lines = ["center %.9g %.9g %.9g" % tuple(self.center)]
        lines += ["%.9g %.9g %.9g %.9g" % (n[0], n[1], n[2], g) for n, g in zip(self.normals, self.offsets)]
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str) -> FreeRegion:
        rows = [line.split() for line in text.strip().splitlines() if line.strip()]
        center = np.array([float(v) for v in rows[0][1:4]])
        body = np.array([[float(v) for v in r] for r in rows[1:]])
        return cls(body[:, :3], body[:, 3], center)


@dataclass(frozen=True)
class SkeletonSegment:
    a: np.ndarray
    b: np.ndarray

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.a) + np.asarray(self.b))


@dataclass(frozen=True)
class ObstacleCloud:
    points: np.ndarray

    @classmethod
    def empty(cls) -> ObstacleCloud:
        return cls(np.zeros((0, 3)))

    def __len__(self) -> int:
        return len(self.points)


def seed_box(seg: SkeletonSegment, dims) -> FreeRegion:
    """World-aligned box of extents ``dims`` centred on the segment midpoint."""
    dims = np.asarray(dims, dtype=float)
    if dims.shape != (3,) or np.any(dims <= 0.0):
        raise ValueError("seed box dimensions must be three positive numbers")
    half = 0.5 * dims
    return FreeRegion(BOX_NORMALS.copy(), np.repeat(half, 2), seg.midpoint.astype(float))


def contains_point(region: FreeRegion, x, alpha: float = 1.0) -> bool:
    x = np.asarray(x, dtype=float)
    return bool(np.all(alpha * region.offsets - region.normals @ (x - region.center) >= 0.0))


def _closest_on_segment(a: np.ndarray, b: np.ndarray, pts: np.ndarray) -> np.ndarray:
    ab = b - a
    L2 = float(ab @ ab)
    if L2 == 0.0:
        return np.broadcast_to(a, pts.shape)
    t = np.clip((pts - a) @ ab / L2, 0.0, 1.0)
    return a + t[:, None] * ab


def chebyshev_center(normals: np.ndarray, h: np.ndarray):
    """Centre and radius of the largest ball inside ``{x : F x <= h}``."""
    n = len(h)
    A = np.hstack([normals, np.linalg.norm(normals, axis=1)[:, None]])
    res = linprog(
        c=np.array([0.0, 0.0, 0.0, -1.0]),
        A_ub=A,
        b_ub=h,
        bounds=[(None, None)] * 3 + [(0.0, None)],
        method="highs",
    )
    if res.status != 0:
        raise SeedInfeasibleError(f"Chebyshev centre LP failed: {res.message}")
    return res.x[:3], float(res.x[3])


def extract_region(
    seg: SkeletonSegment,
    cloud: ObstacleCloud,
    dims,
    margin: float = DEFAULT_MARGIN,
) -> FreeRegion:
    """Clip the seed box against the cloud until no point is left inside.

    Points are processed nearest-to-midline first. Each one adds a halfspace
    whose outward normal points from the closest midline point to the
    obstacle point, placed ``margin`` short of that point. The result always
    contains the midline and is re-centred on its Chebyshev centre.
    """
    a = np.asarray(seg.a, dtype=float)
    b = np.asarray(seg.b, dtype=float)
    box = seed_box(seg, dims)
    normals = [box.normals]
    h = [box.world_offsets()]
    pts = np.asarray(cloud.points, dtype=float).reshape(-1, 3)
    if len(pts):
        inside = np.all(pts @ box.normals.T < box.world_offsets(), axis=1)
        pts = pts[inside]
    added = 0
    while len(pts):
        if added == MAX_CLIP_PLANES:
            raise SeedInfeasibleError(f"{len(pts)} obstacle points remain after {added} planes")
        near = _closest_on_segment(a, b, pts)
        diff = pts - near
        dist = np.einsum("ij,ij->i", diff, diff)
        i = int(np.argmin(dist))
        d = float(np.sqrt(dist[i]))
        if d <= margin:
            raise SeedInfeasibleError("obstacle point within margin of the link midline")
        n = diff[i] / d
        off = float(n @ pts[i]) - margin
        normals.append(n[None, :])
        h.append(np.array([off]))
        added += 1
        pts = pts[pts @ n < off]
    F = np.vstack(normals)
    H = np.concatenate(h)
    if added == 0:
        return box
    for end in (a, b):
        if np.any(F @ end >= H):
            raise SeedInfeasibleError("midline endpoint lies outside the clipped region")
    c, radius = chebyshev_center(F, H)
    if radius <= 0.0:
        raise SeedInfeasibleError("clipped region has empty interior")
    return FreeRegion(F, H - F @ c, c)


def regions_to_text(regions: Iterable[FreeRegion]) -> str:
    return "\n\n".join(r.to_text() for r in regions) + "\n"
