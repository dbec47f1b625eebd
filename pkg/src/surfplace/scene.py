"""Scenes, triangle meshes, cameras and rigid placements.

Canonical frame convention: +z is up, +x is right, -y is forward. All
lengths are meters.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_AREA_EPS = 1e-12


class SceneError(ValueError):
    """Raised for malformed manifests, meshes or scene invariants."""


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable triangle mesh with derived unit face normals."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise SceneError("face index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @classmethod
    def from_arrays(cls, vertices, faces, drop_degenerate: bool = True) -> "TriMesh":
        """Build a mesh, dropping zero-area faces with a warning."""
        v = np.asarray(vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if drop_degenerate and len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise SceneError("face index out of range")
            a = _face_cross(v, f)
            keep = np.linalg.norm(a, axis=1) > _AREA_EPS
            if not keep.all():
                logger.warning("dropping %d degenerate face(s)", int((~keep).sum()))
                f = f[keep]
        return cls(v, f)

    @cached_property
    def face_normals(self) -> np.ndarray:
        c = _face_cross(self.vertices, self.faces)
        n = c / np.linalg.norm(c, axis=1, keepdims=True)
        n.setflags(write=False)
        return n

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(_face_cross(self.vertices, self.faces), axis=1)

    @cached_property
    def face_centers(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.vertices) == 0:
            raise SceneError("empty mesh")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "TriMesh":
        v = self.vertices @ np.asarray(rotation, float).T + np.asarray(translation, float)
        return TriMesh(v, self.faces)

    def __len__(self) -> int:
        return len(self.faces)


def _face_cross(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    tri = v[f]
    return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])


@dataclass(frozen=True)
class Pose:
    """Rigid transform: x_world = rotation @ x_local + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise SceneError("pose rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, float) @ self.rotation.T + self.translation

    def apply_vector(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, float) @ self.rotation.T


@dataclass(frozen=True, eq=False)
class SceneObject:
    id: str
    mesh: TriMesh
    pose: Pose = field(default_factory=Pose)
    caption: Optional[str] = None
    mesh_path: Optional[str] = None

    @cached_property
    def world_mesh(self) -> TriMesh:
        return self.mesh.transformed(self.pose.rotation, self.pose.translation)


@dataclass(frozen=True)
class Camera:
    position: tuple
    look_at: tuple
    up_hint: tuple = (0.0, 0.0, 1.0)
    vertical_fov: float = 60.0
    resolution: tuple = (512, 512)

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", tuple(float(x) for x in self.position))
        object.__setattr__(self, "look_at", tuple(float(x) for x in self.look_at))
        object.__setattr__(self, "up_hint", tuple(float(x) for x in self.up_hint))
        object.__setattr__(self, "resolution", tuple(int(x) for x in self.resolution))
        if np.allclose(self.position, self.look_at):
            raise SceneError("camera position equals look_at")
        if not 0.0 < self.vertical_fov < 180.0:
            raise SceneError("camera fov must be in (0, 180) degrees")


@dataclass(frozen=True, eq=False)
class Scene:
    objects: tuple
    camera: Camera

    def __post_init__(self) -> None:
        objs = tuple(self.objects)
        if not objs:
            raise SceneError("scene needs at least one object")
        ids = [o.id for o in objs]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise SceneError(f"duplicate object id: {', '.join(dup)}")
        object.__setattr__(self, "objects", objs)

    def get(self, object_id: str) -> SceneObject:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise KeyError(object_id)

    @property
    def ids(self) -> list[str]:
        return [o.id for o in self.objects]

    def with_object(self, obj: SceneObject) -> "Scene":
        return Scene(self.objects + (obj,), self.camera)

    def subset(self, ids: Iterable[str]) -> "Scene":
        keep = set(ids)
        return Scene(tuple(o for o in self.objects if o.id in keep), self.camera)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return union_bbox(world_bbox(o) for o in self.objects)


@dataclass(frozen=True)
class PlacementTransform:
    """Translation plus rotation about world-up; yaw kept in [-pi, pi)."""

    translation: tuple = (0.0, 0.0, 0.0)
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "translation", tuple(float(x) for x in self.translation))
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def rotation(self) -> np.ndarray:
        return yaw_matrix(self.yaw)

    def inverse(self) -> "PlacementTransform":
        # x = R p + t  =>  p = R^T (x - t)
        t = -(yaw_matrix(-self.yaw) @ np.asarray(self.translation))
        return PlacementTransform(tuple(t), -self.yaw)

    def as_pose(self) -> Pose:
        return Pose(self.rotation, np.asarray(self.translation))

    def to_json(self) -> dict:
        return {"translation": list(self.translation), "yaw": self.yaw}

    @classmethod
    def from_json(cls, data: dict) -> "PlacementTransform":
        return cls(tuple(data["translation"]), float(data.get("yaw", 0.0)))


def normalize_angle(a: float) -> float:
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a < 0.0:
        a += 2.0 * math.pi
    a -= math.pi
    # fmod rounding can land exactly on +pi
    return -math.pi if a >= math.pi else a


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def apply_placement(mesh: TriMesh, t: PlacementTransform) -> TriMesh:
    """Rotate ``mesh`` by ``t.yaw`` about +z, then translate by ``t.translation``."""
    return mesh.transformed(t.rotation, np.asarray(t.translation))


def world_bbox(obj: SceneObject) -> tuple[np.ndarray, np.ndarray]:
    return obj.world_mesh.bounds()


def union_bbox(boxes: Iterable[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    boxes = list(boxes)
    if not boxes:
        raise SceneError("no boxes to union")
    lo = np.min([b[0] for b in boxes], axis=0)
    hi = np.max([b[1] for b in boxes], axis=0)
    return lo, hi


# --------------------------------------------------------------------------
# OBJ and manifest IO
# --------------------------------------------------------------------------

def load_obj(path: str | os.PathLike) -> TriMesh:
    """Read ``v`` and ``f`` records; polygons are fan-triangulated."""
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise SceneError(f"mesh file not found: {path}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise SceneError(f"{path}:{lineno}: vertex needs 3 coordinates")
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                i = int(tok.split("/")[0])
                idx.append(i - 1 if i > 0 else len(verts) + i)
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    return TriMesh.from_arrays(np.array(verts, float).reshape(-1, 3), np.array(faces, int).reshape(-1, 3))


def write_obj(mesh: TriMesh, path: str | os.PathLike) -> None:
    lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(x: float) -> str:
    s = f"{float(x):.9g}"
    return "0" if s == "-0" else s


def _round(x) -> float:
    return float(_fmt(x))


def load_scene(manifest_path: str | os.PathLike) -> Scene:
    path = Path(manifest_path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise SceneError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SceneError(f"malformed manifest JSON: {exc}") from None
    try:
        return scene_from_json(data, base_dir=path.parent)
    except (KeyError, TypeError) as exc:
        raise SceneError(f"malformed manifest: missing or invalid field {exc}") from None


def scene_from_json(data: dict, base_dir: str | os.PathLike = ".") -> Scene:
    base = Path(base_dir)
    objects = []
    for entry in data["objects"]:
        mesh = load_obj(base / entry["mesh"])
        pose_data = entry.get("pose", {})
        pose = Pose(
            np.asarray(pose_data.get("rotation", np.eye(3).ravel()), float).reshape(3, 3),
            np.asarray(pose_data.get("translation", [0, 0, 0]), float),
        )
        objects.append(SceneObject(entry["id"], mesh, pose, entry.get("caption"), entry["mesh"]))
    cam = data["camera"]
    camera = Camera(cam["position"], cam["look_at"], cam.get("up", (0, 0, 1)),
                    float(cam.get("fov_deg", 60.0)), tuple(cam.get("resolution", (512, 512))))
    return Scene(tuple(objects), camera)


def scene_to_json(scene: Scene) -> dict:
    objs = []
    for o in scene.objects:
        if o.mesh_path is None:
            raise SceneError(f"object {o.id} has no mesh path; use save_scene")
        entry = {"id": o.id, "mesh": o.mesh_path}
        if o.caption is not None:
            entry["caption"] = o.caption
        entry["pose"] = {
            "rotation": [_round(x) for x in o.pose.rotation.ravel()],
            "translation": [_round(x) for x in o.pose.translation],
        }
        objs.append(entry)
    c = scene.camera
    return {
        "objects": objs,
        "camera": {
            "position": [_round(x) for x in c.position],
            "look_at": [_round(x) for x in c.look_at],
            "up": [_round(x) for x in c.up_hint],
            "fov_deg": _round(c.vertical_fov),
            "resolution": list(c.resolution),
        },
    }


def save_scene(scene: Scene, manifest_path: str | os.PathLike) -> None:
    """Write the manifest; objects without a mesh path get an OBJ next to it."""
    path = Path(manifest_path)
    objs = []
    for o in scene.objects:
        if o.mesh_path is None:
            rel = f"{o.id}.obj"
            write_obj(o.mesh, path.parent / rel)
            o = SceneObject(o.id, o.mesh, o.pose, o.caption, rel)
        objs.append(o)
    text = json.dumps(scene_to_json(Scene(tuple(objs), scene.camera)), indent=2)
    path.write_text(text + "\n")


def placed_object(object_id: str, mesh: TriMesh, t: PlacementTransform,
                  caption: Optional[str] = None, mesh_path: Optional[str] = None) -> SceneObject:
    return SceneObject(object_id, mesh, t.as_pose(), caption, mesh_path)


def box_mesh(size: Sequence[float], center: Sequence[float] = (0, 0, 0)) -> TriMesh:
    """Axis-aligned box with outward-facing triangles."""
    sx, sy, sz = (float(s) / 2 for s in size)
    cx, cy, cz = center
    v = np.array([[x, y, z] for z in (-sz, sz) for y in (-sy, sy) for x in (-sx, sx)]) + [cx, cy, cz]
    # vertex index = 4*zi + 2*yi + xi
    f = [
        [0, 2, 3], [0, 3, 1],  # bottom (-z)
        [4, 5, 7], [4, 7, 6],  # top (+z)
        [0, 1, 5], [0, 5, 4],  # front (-y)
        [2, 6, 7], [2, 7, 3],  # back (+y)
        [0, 4, 6], [0, 6, 2],  # left (-x)
        [1, 3, 7], [1, 7, 5],  # right (+x)
    ]
    return TriMesh(v, np.array(f))


def merge_meshes(meshes: Iterable[TriMesh]) -> TriMesh:
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    return TriMesh(np.vstack(verts), np.vstack(faces))


def cylinder_mesh(radius: float, height: float, segments: int = 24, base_z: float = 0.0) -> TriMesh:
    ang = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.full(segments, base_z)])
    top = np.column_stack([ring, np.full(segments, base_z + height)])
    v = np.vstack([bottom, top, [[0, 0, base_z], [0, 0, base_z + height]]])
    cb, ct = 2 * segments, 2 * segments + 1
    f = []
    for i in range(segments):
        j = (i + 1) % segments
        f += [[i, j, segments + j], [i, segments + j, segments + i]]
        f.append([cb, j, i])
        f.append([ct, segments + i, segments + j])
    return TriMesh(v, np.array(f))


def uv_sphere_mesh(radius: float, rings: int = 12, segments: int = 24) -> TriMesh:
    verts = [[0.0, 0.0, radius]]
    for i in range(1, rings):
        phi = np.pi * i / rings
        for j in range(segments):
            th = 2.0 * np.pi * j / segments
            verts.append([radius * np.sin(phi) * np.cos(th), radius * np.sin(phi) * np.sin(th), radius * np.cos(phi)])
    verts.append([0.0, 0.0, -radius])
    f = []
    s = segments
    for j in range(s):
        f.append([0, 1 + j, 1 + (j + 1) % s])
    for i in range(rings - 2):
        a, b = 1 + i * s, 1 + (i + 1) * s
        for j in range(s):
            k = (j + 1) % s
            f += [[a + j, b + j, b + k], [a + j, b + k, a + k]]
    last = len(verts) - 1
    base = 1 + (rings - 2) * s
    for j in range(s):
        f.append([base + j, last, base + (j + 1) % s])
    return TriMesh(np.array(verts), np.array(f))
