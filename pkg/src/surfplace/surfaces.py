"""Planar interaction-surface extraction from triangle meshes."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    DegenerateGeometryError,
    convex_hull_2d,
    convex_polygon_distance,
    plane_basis,
    polygon_area,
)
from .scene import Pose, TriMesh

logger = logging.getLogger(__name__)


class Direction(enum.Enum):
    UP = "up"
    DOWN = "down"
    LEFT = "left"
    RIGHT = "right"
    FRONT = "front"
    BACK = "back"

    @property
    def vector(self) -> np.ndarray:
        return _DIRECTION_VECTORS[self].copy()

    @classmethod
    def parse(cls, label: str) -> "Direction":
        try:
            return cls(str(label).strip().lower())
        except ValueError:
            raise ValueError(f"unknown direction {label!r}") from None


_DIRECTION_VECTORS = {
    Direction.UP: np.array([0.0, 0.0, 1.0]),
    Direction.DOWN: np.array([0.0, 0.0, -1.0]),
    Direction.RIGHT: np.array([1.0, 0.0, 0.0]),
    Direction.LEFT: np.array([-1.0, 0.0, 0.0]),
    Direction.FRONT: np.array([0.0, -1.0, 0.0]),
    Direction.BACK: np.array([0.0, 1.0, 0.0]),
}

MESH_CLUSTER = "mesh-cluster"
BBOX_FACE = "bbox-face"


@dataclass(frozen=True, eq=False)
class InteractionSurface:
    """Convex planar polygon with an outward unit normal."""

    polygon: np.ndarray
    normal: np.ndarray
    source: str = MESH_CLUSTER

    def __post_init__(self) -> None:
        poly = np.array(self.polygon, dtype=float).reshape(-1, 3)
        n = np.array(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if len(poly) < 3 or norm == 0.0:
            raise DegenerateGeometryError("surface needs >= 3 points and a nonzero normal")
        n = n / norm
        poly.setflags(write=False)
        n.setflags(write=False)
        object.__setattr__(self, "polygon", poly)
        object.__setattr__(self, "normal", n)

    @cached_property
    def area(self) -> float:
        return abs(polygon_area(self.polygon, self.normal))

    @property
    def centroid(self) -> np.ndarray:
        return self.polygon.mean(axis=0)

    @property
    def level(self) -> float:
        """Offset of the supporting plane along the normal."""
        return float(self.polygon[0] @ self.normal)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "InteractionSurface":
        r = np.asarray(rotation, float)
        return InteractionSurface(self.polygon @ r.T + translation, r @ self.normal, self.source)

    def posed(self, pose: Pose) -> "InteractionSurface":
        return self.transformed(pose.rotation, pose.translation)

    def to_json(self) -> dict:
        return {
            "polygon": [[float(x) for x in p] for p in self.polygon],
            "normal": [float(x) for x in self.normal],
            "area": float(self.area),
            "source": self.source,
        }

    @classmethod
    def from_json(cls, data: dict) -> "InteractionSurface":
        return cls(np.array(data["polygon"], float), np.array(data["normal"], float),
                   data.get("source", MESH_CLUSTER))


@dataclass(frozen=True)
class ExtractionConfig:
    cos_threshold: float = 0.95
    eps_frac: float = 0.02
    merge_frac: float = 0.01
    bbox_only: bool = False


def filter_faces(mesh: TriMesh, direction: Direction, cos_threshold: float) -> np.ndarray:
    if not 0.0 < cos_threshold <= 1.0:
        raise ValueError("cos_threshold must be in (0, 1]")
    if len(mesh) == 0:
        return np.zeros(0, dtype=int)
    dots = mesh.face_normals @ direction.vector
    return np.flatnonzero(dots >= cos_threshold)


def cluster_by_level(mesh: TriMesh, faces: Sequence[int], direction: Direction, eps: float) -> list[np.ndarray]:
    """1D DBSCAN (min_samples=1) on face-center heights along ``direction``.

    With one required sample every point is a core point, so clusters are
    the chains of sorted projections whose neighbour gaps are <= ``eps``.
    Clusters come back ordered by ascending level.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    faces = np.asarray(faces, dtype=int)
    if faces.size == 0:
        return []
    proj = mesh.face_centers[faces] @ direction.vector
    order = np.argsort(proj, kind="stable")
    gaps = np.diff(proj[order])
    breaks = np.flatnonzero(gaps > eps) + 1
    return [np.sort(faces[chunk]) for chunk in np.split(order, breaks)]


def build_hull(mesh: TriMesh, cluster: Sequence[int], direction: Direction) -> InteractionSurface:
    """Flatten a face cluster onto its highest level along ``direction`` and hull it."""
    cluster = np.asarray(cluster, dtype=int)
    if cluster.size == 0:
        raise ValueError("empty cluster")
    n = direction.vector
    pts = mesh.vertices[np.unique(mesh.faces[cluster].ravel())]
    level = float((pts @ n).max())
    u, v = plane_basis(n)
    xy = np.column_stack([pts @ u, pts @ v])
    hull = convex_hull_2d(xy)
    if len(hull) < 3:
        raise DegenerateGeometryError("degenerate hull")
    h = xy[hull]
    poly = h[:, :1] * u + h[:, 1:2] * v + level * n
    return InteractionSurface(poly, n, MESH_CLUSTER)


def merge_surfaces(surfaces: Sequence[InteractionSurface], merge_dist: float) -> list[InteractionSurface]:
    """Drop surfaces closer than ``merge_dist`` to a larger kept surface."""
    ordered = sorted(surfaces, key=lambda s: -s.area)
    kept: list[InteractionSurface] = []
    for s in ordered:
        if all(convex_polygon_distance(s.polygon, s.normal, k.polygon, k.normal) >= merge_dist for k in kept):
            kept.append(s)
    return kept


def bbox_surface(mesh: TriMesh, direction: Direction) -> InteractionSurface:
    """Face of the mesh's axis-aligned bounding box on the ``direction`` side."""
    lo, hi = mesh.bounds()
    n = direction.vector
    axis = int(np.flatnonzero(n)[0])
    level = hi[axis] if n[axis] > 0 else lo[axis]
    others = [i for i in range(3) if i != axis]
    corners = []
    for a, b in ((0, 0), (1, 0), (1, 1), (0, 1)):
        p = np.empty(3)
        p[axis] = level
        p[others[0]] = (lo, hi)[a][others[0]]
        p[others[1]] = (lo, hi)[b][others[1]]
        corners.append(p)
    poly = np.array(corners)
    if polygon_area(poly, n) < 0:
        poly = poly[::-1]
    if abs(polygon_area(poly, n)) <= 0.0:
        raise DegenerateGeometryError("flat bounding box has no face area")
    return InteractionSurface(poly, n, BBOX_FACE)


def extract_surfaces(mesh: TriMesh, direction: Direction,
                     config: Optional[ExtractionConfig] = None) -> list[InteractionSurface]:
    """Candidate interaction surfaces facing ``direction``, largest first.

    Mesh clusters are followed by the bounding-box face; ties in area keep
    that order.
    """
    config = config or ExtractionConfig()
    if len(mesh) == 0:
        raise ValueError("empty mesh")
    lo, hi = mesh.bounds()
    diag = float(np.linalg.norm(hi - lo))
    found: list[InteractionSurface] = []
    if not config.bbox_only:
        faces = filter_faces(mesh, direction, config.cos_threshold)
        for cluster in cluster_by_level(mesh, faces, direction, config.eps_frac * diag):
            try:
                found.append(build_hull(mesh, cluster, direction))
            except DegenerateGeometryError:
                logger.warning("skipping degenerate cluster of %d face(s)", len(cluster))
        found = merge_surfaces(found, config.merge_frac * diag)
    try:
        found.append(bbox_surface(mesh, direction))
    except DegenerateGeometryError:
        logger.warning("bounding box is flat along %s", direction.value)
    return sorted(found, key=lambda s: -s.area)
