"""Observation regions and numerical quadrature over them.

A domain is either a 1D interval or a planar bounding rectangle with an
optional simple-polygon mask. All integrals in the package go through a
QuadratureRule built here: Gauss-Legendre panels in 1D, a center-sampled
masked Riemann grid in 2D.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace area of a closed polygon given as an ordered (V, 2) vertex array."""
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Proper intersection test for open segments (p1,p2) and (p3,p4)."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(v) < 1e-14:
            return 0
        return 1 if v > 0 else -1

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return d1 != d2 and d3 != d4 and 0 not in (d1, d2, d3, d4)


def _polygon_is_simple(vertices: np.ndarray) -> bool:
    nv = len(vertices)
    for i in range(nv):
        a1, a2 = vertices[i], vertices[(i + 1) % nv]
        for j in range(i + 1, nv):
            if j == i or (j + 1) % nv == i or (i + 1) % nv == j:
                continue  # adjacent edges share a vertex, skip
            b1, b2 = vertices[j], vertices[(j + 1) % nv]
            if _segments_intersect(a1, a2, b1, b2):
                return False
    return True


def _points_on_boundary(points: np.ndarray, vertices: np.ndarray, tol: float) -> np.ndarray:
    """Boolean mask of points within tol of any polygon edge."""
    on = np.zeros(len(points), dtype=bool)
    nv = len(vertices)
    px, py = points[:, 0], points[:, 1]
    for i in range(nv):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % nv]
        dx, dy = x2 - x1, y2 - y1
        seg2 = dx * dx + dy * dy
        if seg2 == 0.0:
            d2 = (px - x1) ** 2 + (py - y1) ** 2
        else:
            t = np.clip(((px - x1) * dx + (py - y1) * dy) / seg2, 0.0, 1.0)
            d2 = (px - (x1 + t * dx)) ** 2 + (py - (y1 + t * dy)) ** 2
        on |= d2 <= tol * tol
    return on


def points_in_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd containment test; points on the boundary count as inside.

    points: (N, 2) array; vertices: ordered (V, 2) array of a simple polygon.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    scale = max(np.ptp(vertices[:, 0]), np.ptp(vertices[:, 1]), 1.0)
    inside = _points_on_boundary(points, vertices, 1e-12 * scale)

    px, py = points[:, 0], points[:, 1]
    nv = len(vertices)
    crossings = np.zeros(len(points), dtype=int)
    for i in range(nv):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % nv]
        straddles = (y1 > py) != (y2 > py)
        if not straddles.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        crossings += straddles & (px < x_cross)
    return inside | (crossings % 2 == 1)


@dataclass(frozen=True)
class ObservationDomain:
    """Common observation region shared by all replicates.

    kind "interval": [a, b] with measure b - a.
    kind "planar": bounding rect (t1min, t1max, t2min, t2max), optionally masked
    by a simple polygon contained in the rect; measure is the polygon (shoelace)
    or rectangle area.
    """

    kind: str
    a: float = 0.0
    b: float = 1.0
    rect: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    polygon: Optional[np.ndarray] = None
    measure: float = field(init=False)

    def __post_init__(self):
        if self.kind == "interval":
            if not self.a < self.b:
                raise ValueError(f"degenerate interval: a={self.a} must be < b={self.b}")
            object.__setattr__(self, "measure", float(self.b - self.a))
        elif self.kind == "planar":
            x0, x1, y0, y1 = self.rect
            if not (x0 < x1 and y0 < y1):
                raise ValueError(f"degenerate bounding rect {self.rect}")
            if self.polygon is not None:
                poly = np.asarray(self.polygon, dtype=float)
                if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
                    raise ValueError("mask polygon must be an ordered (V, 2) vertex list, V >= 3")
                if (poly[:, 0] < x0).any() or (poly[:, 0] > x1).any() or (poly[:, 1] < y0).any() or (poly[:, 1] > y1).any():
                    raise ValueError("mask polygon must be contained in the bounding rect")
                if not _polygon_is_simple(poly):
                    raise ValueError("mask polygon must be simple (no self-intersections)")
                poly.setflags(write=False)
                object.__setattr__(self, "polygon", poly)
                area = polygon_area(poly)
            else:
                area = (x1 - x0) * (y1 - y0)
            if area <= 0.0:
                raise ValueError("domain measure must be positive")
            object.__setattr__(self, "measure", float(area))
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")

    @staticmethod
    def interval(a: float, b: float) -> "ObservationDomain":
        return ObservationDomain(kind="interval", a=float(a), b=float(b))

    @staticmethod
    def planar(rect: Sequence[float], polygon=None) -> "ObservationDomain":
        return ObservationDomain(kind="planar", rect=tuple(float(v) for v in rect), polygon=polygon)

    @property
    def dim(self) -> int:
        return 1 if self.kind == "interval" else 2

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        """Vectorized membership test; boundary points count as inside."""
        points = np.asarray(points, dtype=float)
        if self.kind == "interval":
            if points.ndim > 1:
                raise ValueError("1D domain expects scalar coordinates, got shape " f"{points.shape}")
            pts = np.atleast_1d(points)
            return (pts >= self.a) & (pts <= self.b)
        pts = np.atleast_2d(points)
        if pts.shape[1] != 2:
            raise ValueError(f"2D domain expects (N, 2) points, got shape {points.shape}")
        x0, x1, y0, y1 = self.rect
        in_rect = (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
        if self.polygon is None:
            return in_rect
        result = np.zeros(len(pts), dtype=bool)
        if in_rect.any():
            result[in_rect] = points_in_polygon(pts[in_rect], self.polygon)
        return result


def contains(domain: ObservationDomain, point) -> bool:
    """True iff the point lies in B (boundary inclusive)."""
    point = np.asarray(point, dtype=float)
    if domain.kind == "interval":
        if point.ndim != 0:
            raise ValueError("1D domain expects a scalar point")
        return bool(domain.contains_points(point)[0])
    if point.shape != (2,):
        raise ValueError("2D domain expects a length-2 point")
    return bool(domain.contains_points(point[None, :])[0])


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and positive weights realizing the integral over B.

    1D nodes have shape (N,), 2D nodes (N, 2). Weights sum to measure(B)
    exactly for 1D Gauss panels and to within the perimeter-cell error for
    the 2D masked grid.
    """

    nodes: np.ndarray
    weights: np.ndarray
    resolution: str

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.weights)


def build_quadrature(
    domain: ObservationDomain,
    resolution: int,
    breakpoints: Optional[np.ndarray] = None,
) -> QuadratureRule:
    """Build the quadrature rule for a domain.

    1D: Gauss-Legendre with `resolution` nodes per panel; panels come from
    `breakpoints` (e.g. spline knot spans) or default to the single panel
    [a, b]. 2D: a `resolution` x `resolution` grid of cells over the bounding
    rect, keeping cells whose centers lie in B, each weighted by its cell area.
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    if domain.measure <= 0.0:
        raise ValueError("domain has nonpositive measure")

    if domain.kind == "interval":
        if breakpoints is None:
            edges = np.array([domain.a, domain.b])
        else:
            edges = np.asarray(breakpoints, dtype=float)
            if edges[0] != domain.a or edges[-1] != domain.b or (np.diff(edges) <= 0).any():
                raise ValueError("breakpoints must increase strictly from a to b")
        base_x, base_w = np.polynomial.legendre.leggauss(resolution)
        nodes = []
        weights = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            half = 0.5 * (hi - lo)
            nodes.append(half * base_x + 0.5 * (hi + lo))
            weights.append(half * base_w)
        return QuadratureRule(
            nodes=np.concatenate(nodes),
            weights=np.concatenate(weights),
            resolution=f"gauss{resolution}x{len(edges) - 1}panels",
        )

    x0, x1, y0, y1 = domain.rect
    xs = x0 + (x1 - x0) * (np.arange(resolution) + 0.5) / resolution
    ys = y0 + (y1 - y0) * (np.arange(resolution) + 0.5) / resolution
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    centers = np.column_stack([gx.ravel(), gy.ravel()])
    keep = domain.contains_points(centers)
    if not keep.any():
        raise ValueError("no grid cell centers fall inside the domain; increase resolution")
    cell_area = (x1 - x0) * (y1 - y0) / resolution**2
    nodes = centers[keep]
    return QuadratureRule(
        nodes=nodes,
        weights=np.full(len(nodes), cell_area),
        resolution=f"grid{resolution}",
    )
