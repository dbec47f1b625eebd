"""Planar convex polygon geometry in 3D.

Polygons are ``(N, 3)`` vertex arrays, counterclockwise when viewed from the
side their normal points to.
"""

from __future__ import annotations

import numpy as np

from . import _kernels

EPS = 1e-12


class DegenerateGeometryError(ValueError):
    pass


def plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return unit ``u, v`` spanning the plane with ``u x v == normal``."""
    n = np.asarray(normal, float)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(helper, n)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Indices of the convex hull of 2D points, counterclockwise.

    Andrew's monotone chain; collinear boundary points are dropped.
    """
    pts = np.asarray(points, float)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    if len(order) < 3:
        return order

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    scale = max(float(np.ptp(pts, axis=0).max()), 1.0)
    tol = 1e-12 * scale * scale
    lower: list[int] = []
    for i in order:
        while len(lower) >= 2 and cross(pts[lower[-2]], pts[lower[-1]], pts[i]) <= tol:
            lower.pop()
        lower.append(int(i))
    upper: list[int] = []
    for i in order[::-1]:
        while len(upper) >= 2 and cross(pts[upper[-2]], pts[upper[-1]], pts[i]) <= tol:
            upper.pop()
        upper.append(int(i))
    return np.array(lower[:-1] + upper[:-1], dtype=int)


def polygon_area_2d(xy: np.ndarray) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_area(poly: np.ndarray, normal: np.ndarray) -> float:
    """Signed area of a planar polygon, positive when CCW about ``normal``."""
    p = np.asarray(poly, float)
    c = np.cross(p, np.roll(p, -1, axis=0)).sum(axis=0)
    return 0.5 * float(np.dot(c, normal))


def newell_normal(poly: np.ndarray) -> np.ndarray:
    p = np.asarray(poly, float)
    c = np.cross(p - p.mean(axis=0), np.roll(p, -1, axis=0) - p.mean(axis=0)).sum(axis=0)
    n = np.linalg.norm(c)
    if n < EPS:
        raise DegenerateGeometryError("polygon has zero area")
    return c / n


def points_in_convex_polygon(points: np.ndarray, poly: np.ndarray, normal: np.ndarray,
                             tol: float = 1e-9) -> np.ndarray:
    """Boolean mask of points (assumed in or projected to the polygon plane) inside ``poly``."""
    edges = np.roll(poly, -1, axis=0) - poly                  # (K, 3)
    en = np.cross(normal, edges)                              # inward edge normals (K, 3)
    rel = points[:, None, :] - poly[None, :, :]               # (P, K, 3)
    side = np.einsum("pkj,kj->pk", rel, en)
    lens = np.linalg.norm(edges, axis=1)
    return np.all(side >= -tol * lens, axis=1)


def convex_polygon_distance(a: np.ndarray, na: np.ndarray, b: np.ndarray, nb: np.ndarray) -> float:
    """Exact minimum distance between two filled convex planar polygons in 3D.

    Zero when they touch or intersect. The minimum is attained at a vertex
    of one polygon against the other's face, or at an edge pair; crossings
    of an edge through the other's interior are detected separately.
    """
    return float(_kernels.polygon_distance(_f64(a), _f64(na), _f64(b), _f64(nb)))


def segment_distance(p1, q1, p2, q2) -> float:
    return float(_kernels.seg_seg_dist(_f64(p1), _f64(q1), _f64(p2), _f64(q2)))


def _f64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def fan_triangles(poly: np.ndarray) -> np.ndarray:
    """Fan triangulation of a convex polygon, ``(N-2, 3, 3)``."""
    n = len(poly)
    idx = np.array([[0, i, i + 1] for i in range(1, n - 1)], dtype=int)
    return poly[idx]


def map_unit_square_to_polygon(uv: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Area-preserving map of points in [0,1)^2 into a convex polygon.

    The first coordinate picks a fan triangle by cumulative area and is then
    rescaled within that triangle's slot, so low-discrepancy inputs stay
    well spread in the output.
    """
    tris = fan_triangles(poly)
    areas = 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)
    total = areas.sum()
    if total <= EPS:
        raise DegenerateGeometryError("cannot sample a zero-area polygon")
    cum = np.concatenate([[0.0], np.cumsum(areas) / total])
    u, v = uv[:, 0], uv[:, 1]
    k = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(tris) - 1)
    width = cum[k + 1] - cum[k]
    w = np.clip((u - cum[k]) / np.where(width > 0, width, 1.0), 0.0, 1.0)
    r = np.sqrt(w)
    t = tris[k]
    return (1.0 - r)[:, None] * t[:, 0] + (r * (1.0 - v))[:, None] * t[:, 1] + (r * v)[:, None] * t[:, 2]
