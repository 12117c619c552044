"""Convex polygon helpers, limited-range Voronoi cells and grid integration.

Polygons are ``(n, 2)`` float arrays ordered counter-clockwise. An empty
polygon is an array of shape ``(0, 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_SEGMENTS = 32
DEFAULT_CELL_GRID = 40
MASS_FLOOR = 1e-12
INSIDE_TOL = 1e-9

DensityFn = Callable[[np.ndarray], np.ndarray]


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for CCW)."""
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(poly: np.ndarray) -> np.ndarray:
    """Area centroid; falls back to the vertex mean for degenerate polygons."""
    poly = np.asarray(poly, dtype=float)
    if len(poly) == 0:
        raise ValueError("centroid of an empty polygon is undefined")
    a = polygon_area(poly)
    if abs(a) < 1e-15:
        return poly.mean(axis=0)
    nxt = np.roll(poly, -1, axis=0)
    cr = _cross(poly, nxt)
    cx = np.sum((poly[:, 0] + nxt[:, 0]) * cr) / (6.0 * a)
    cy = np.sum((poly[:, 1] + nxt[:, 1]) * cr) / (6.0 * a)
    return np.array([cx, cy])


def points_in_polygon(points: np.ndarray, poly: np.ndarray, tol: float = INSIDE_TOL) -> np.ndarray:
    """Boolean mask of points inside (or on the boundary of) a convex CCW polygon."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return np.zeros(len(points), dtype=bool)
    edges = np.roll(poly, -1, axis=0) - poly
    length = np.hypot(edges[:, 0], edges[:, 1])
    keep = length > 0.0
    a, e, length = poly[keep], edges[keep], length[keep]
    # distance-scaled cross products, so tol is in meters
    side = (np.outer(points[:, 1], e[:, 0]) - np.outer(points[:, 0], e[:, 1]) - (a[:, 1] * e[:, 0] - a[:, 0] * e[:, 1])) / length
    return np.all(side >= -tol, axis=1)


@dataclass(frozen=True, eq=False)
class Environment:
    """Convex polygonal region to be covered."""

    vertices: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("environment needs at least 3 two-dimensional vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("environment vertices must be finite")
        edges = np.roll(v, -1, axis=0) - v
        if np.any(np.hypot(edges[:, 0], edges[:, 1]) == 0.0):
            raise ValueError("environment has coincident consecutive vertices")
        turns = _cross(edges, np.roll(edges, -1, axis=0))
        if not (np.all(turns > 0) or np.all(turns < 0)):
            raise ValueError("environment polygon must be strictly convex")
        if polygon_area(v) < 0:
            v = v[::-1].copy()
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def rectangle(cls, width: float, height: float, origin=(0.0, 0.0)) -> "Environment":
        x0, y0 = origin
        return cls(np.array([[x0, y0], [x0 + width, y0], [x0 + width, y0 + height], [x0, y0 + height]]))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    @property
    def diameter(self) -> float:
        d = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    def contains(self, points, tol: float = INSIDE_TOL) -> np.ndarray | bool:
        pts = np.asarray(points, dtype=float)
        mask = points_in_polygon(pts.reshape(-1, 2), self.vertices, tol)
        return bool(mask[0]) if pts.ndim == 1 else mask

    def project(self, point) -> np.ndarray:
        """Nearest point of the (closed) polygon to ``point``."""
        p = np.asarray(point, dtype=float)
        if self.contains(p, tol=0.0):
            return p.copy()
        best, best_d = None, np.inf
        v = self.vertices
        for k in range(len(v)):
            a, b = v[k], v[(k + 1) % len(v)]
            ab = b - a
            s = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
            q = a + s * ab
            d = float(np.dot(p - q, p - q))
            if d < best_d:
                best, best_d = q, d
        return best

    def halfplanes(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Edge half-planes as (point, outward normal) pairs."""
        out = []
        v = self.vertices
        for k in range(len(v)):
            a, b = v[k], v[(k + 1) % len(v)]
            e = b - a
            out.append((a, np.array([e[1], -e[0]])))
        return out


@dataclass(frozen=True)
class SensingGeometry:
    """Sensing radius ``R``; cells are limited to radius ``r = R / 2``."""

    sensing_radius: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.sensing_radius) and self.sensing_radius > 0):
            raise ValueError("sensing_radius must be positive and finite")

    @property
    def cell_radius(self) -> float:
        return self.sensing_radius / 2.0


@dataclass
class VoronoiCell:
    owner: int
    vertices: np.ndarray
    mass: float = float("nan")
    centroid: np.ndarray = field(default_factory=lambda: np.full(2, np.nan))

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) < 3


def disk_polygon(center, radius: float, segments: int = DEFAULT_SEGMENTS) -> np.ndarray:
    """Regular polygon inscribed in the circle of ``radius`` around ``center``."""
    c = np.asarray(center, dtype=float)
    if not (np.all(np.isfinite(c)) and np.isfinite(radius)):
        raise ValueError("disk center and radius must be finite")
    if radius <= 0:
        raise ValueError("disk radius must be positive")
    if segments < 3:
        raise ValueError("a disk polygon needs at least 3 segments")
    ang = 2.0 * np.pi * np.arange(segments) / segments
    return c + radius * np.column_stack([np.cos(ang), np.sin(ang)])


def clip_halfplane(poly: np.ndarray, point, normal) -> np.ndarray:
    """Intersect a convex polygon with ``{x : (x - point) . normal <= 0}``."""
    poly = np.asarray(poly, dtype=float)
    if len(poly) == 0:
        return poly.reshape(0, 2)
    p0 = np.asarray(point, dtype=float)
    n = np.asarray(normal, dtype=float)
    s = (poly - p0) @ n
    if np.all(s <= 0):
        return poly.copy()
    if np.all(s > 0):
        return np.empty((0, 2))
    # Sutherland-Hodgman, vectorized: per edge keep the start vertex if it
    # is inside, then the crossing point if the edge crosses the line
    nxt, s_nxt = np.roll(poly, -1, axis=0), np.roll(s, -1)
    keep_a = s <= 0
    crosses = keep_a != (s_nxt <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(crosses, s / (s - s_nxt), 0.0)
    cand = np.stack([poly, poly + t[:, None] * (nxt - poly)], axis=1)
    res = cand[np.column_stack([keep_a, crosses])]
    if len(res) > 1:
        # drop repeated vertices produced when a vertex lies on the line
        keep = np.hypot(*(res - np.roll(res, 1, axis=0)).T) > 1e-12
        res = res[keep]
    if len(res) < 3:
        return np.empty((0, 2))
    return res


def limited_voronoi_cell(
    owner,
    neighbors: Sequence,
    env: Environment,
    geom: SensingGeometry,
    segments: int = DEFAULT_SEGMENTS,
    owner_id: int = 0,
) -> VoronoiCell:
    """Environment ∩ sensing disk of radius R/2 ∩ bisector half-planes.

    Neighbors farther than ``R`` from the owner are ignored; coincident
    neighbors have no bisector and are skipped.
    """
    p = np.asarray(owner, dtype=float)
    if not env.contains(p):
        raise ValueError(f"robot {owner_id} at {p.tolist()} lies outside the environment")
    poly = disk_polygon(p, geom.cell_radius, segments)
    for a, n in env.halfplanes():
        poly = clip_halfplane(poly, a, n)
    for q in neighbors:
        q = np.asarray(q, dtype=float)
        d = q - p
        dist = float(np.hypot(d[0], d[1]))
        if dist > geom.sensing_radius or dist < 1e-12:
            continue
        poly = clip_halfplane(poly, 0.5 * (p + q), d)
    return VoronoiCell(owner=owner_id, vertices=poly)


def performance_value(s, r: float):
    """Sensing performance ``-min(s^2, r^2)``."""
    s = np.asarray(s, dtype=float)
    out = -np.minimum(s * s, r * r)
    return float(out) if out.ndim == 0 else out


def cell_grid(poly: np.ndarray, resolution: float | None = None, grid: int = DEFAULT_CELL_GRID):
    """Midpoint grid over the polygon's bounding box, restricted to the polygon.

    Returns ``(points, cell_area)``.
    """
    lo = poly.min(axis=0)
    hi = poly.max(axis=0)
    span = hi - lo
    if resolution is None:
        nx = ny = grid
        hx, hy = span[0] / nx, span[1] / ny
    else:
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        nx = max(1, int(np.ceil(span[0] / resolution)))
        ny = max(1, int(np.ceil(span[1] / resolution)))
        hx, hy = span[0] / nx, span[1] / ny
    xs = lo[0] + (np.arange(nx) + 0.5) * hx
    ys = lo[1] + (np.arange(ny) + 0.5) * hy
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return pts[points_in_polygon(pts, poly)], hx * hy


def cell_mass_centroid(
    cell: VoronoiCell | np.ndarray,
    density: DensityFn,
    resolution: float | None = None,
    grid: int = DEFAULT_CELL_GRID,
) -> tuple[float, np.ndarray]:
    """Riemann-sum mass and density-weighted centroid of a cell.

    ``density`` maps an ``(m, 2)`` array of points to ``m`` non-negative
    values. When the mass falls below ``MASS_FLOOR`` the geometric centroid
    is returned with zero mass.
    """
    poly = cell.vertices if isinstance(cell, VoronoiCell) else np.asarray(cell, dtype=float)
    if len(poly) < 3:
        raise ValueError("cannot integrate over an empty cell")
    pts, da = cell_grid(poly, resolution, grid)
    mass, centroid = 0.0, polygon_centroid(poly)
    if len(pts):
        phi = np.asarray(density(pts), dtype=float)
        if not np.all(np.isfinite(phi)):
            raise ValueError("density returned non-finite values")
        if np.any(phi < 0):
            raise ValueError("density returned negative values")
        w = phi.sum()
        if w * da >= MASS_FLOOR:
            mass, centroid = float(w * da), (pts * phi[:, None]).sum(axis=0) / w
    if isinstance(cell, VoronoiCell):
        cell.mass, cell.centroid = mass, centroid
    return mass, centroid
