"""Flat-shaded software rendering, segmentation masks and colored overlays."""

from __future__ import annotations

import io
import math
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from . import _kernels
from .scene import Camera, Scene, SceneError, TriMesh
from .surfaces import InteractionSurface

LIGHT_DIR = np.array([1.0, -1.0, 2.0]) / math.sqrt(6.0)
AMBIENT = 0.3
BACKGROUND = (236, 236, 240)
NEAR = 1e-3
MASK_ALPHA = 0.5
VISIBLE_THRESHOLD = 0.05

# names the judge answers with; neighbours in the list are far apart in hue
PALETTE = {
    "red": (230, 25, 45),
    "green": (40, 180, 60),
    "blue": (0, 90, 220),
    "yellow": (255, 215, 0),
    "cyan": (60, 210, 230),
    "magenta": (235, 40, 220),
    "orange": (245, 130, 40),
    "purple": (130, 50, 180),
    "lime": (190, 240, 50),
    "pink": (250, 170, 200),
    "teal": (0, 128, 128),
    "brown": (140, 80, 30),
    "navy": (0, 0, 128),
    "maroon": (128, 0, 0),
    "olive": (128, 128, 0),
    "lavender": (200, 170, 255),
    "turquoise": (64, 224, 208),
    "gold": (200, 150, 20),
    "black": (0, 0, 0),
    "white": (255, 255, 255),
}
COLOR_NAMES = tuple(PALETTE)


def palette(n: int) -> list[str]:
    if n > len(COLOR_NAMES):
        raise ValueError(f"palette holds only {len(COLOR_NAMES)} colors")
    return list(COLOR_NAMES[:n])


@dataclass(frozen=True, eq=False)
class RenderImage:
    """Color, depth and per-pixel object ownership of one render.

    ``object_id_map`` holds indices into ``ids`` and -1 for background.
    """

    rgb: np.ndarray
    depth: np.ndarray
    object_id_map: np.ndarray
    ids: tuple

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    def owner(self, x: int, y: int) -> Optional[str]:
        k = int(self.object_id_map[y, x])
        return None if k < 0 else self.ids[k]

    def mask(self, object_id: str) -> np.ndarray:
        if object_id not in self.ids:
            return np.zeros(self.object_id_map.shape, bool)
        return self.object_id_map == self.ids.index(object_id)

    def pixel_count(self, object_id: str) -> int:
        return int(self.mask(object_id).sum())

    def png_bytes(self) -> bytes:
        return png_bytes(self.rgb)

    def save(self, path) -> None:
        save_png(self.rgb, path)


def png_bytes(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8), "RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_png(rgb: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(png_bytes(rgb))


def _camera_frame(cam: Camera) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pos = np.asarray(cam.position)
    fwd = np.asarray(cam.look_at) - pos
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(cam.up_hint, float)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        # up hint parallel to the view axis; any perpendicular will do
        right = np.cross(fwd, [0.0, 1.0, 0.0] if abs(fwd[1]) < 0.9 else [1.0, 0.0, 0.0])
    right /= np.linalg.norm(right)
    return right, np.cross(right, fwd), fwd


def object_tint(object_id: str) -> float:
    """Stable per-object gray level so neighbouring objects stay distinguishable."""
    return 0.55 + 0.4 * (zlib.crc32(object_id.encode()) % 1000) / 999.0


def _shade(tris_world: np.ndarray, eye: np.ndarray) -> np.ndarray:
    n = np.cross(tris_world[:, 1] - tris_world[:, 0], tris_world[:, 2] - tris_world[:, 0])
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    # two-sided: flip normals that face away from the eye
    facing = np.einsum("ij,ij->i", eye - tris_world.mean(axis=1), n)
    n[facing < 0] *= -1.0
    return AMBIENT + (1.0 - AMBIENT) * np.maximum(n @ LIGHT_DIR, 0.0)


def _render_layers(layers: Sequence[tuple[str, np.ndarray, np.ndarray]], camera: Camera):
    """Rasterize ``(id, triangles (T,3,3), base rgb (T,3) in [0,1])`` layers."""
    w, h = camera.resolution
    if w <= 0 or h <= 0:
        raise SceneError("zero-resolution camera")
    eye = np.asarray(camera.position)
    right, up, fwd = _camera_frame(camera)
    ids = tuple(lid for lid, _, _ in layers)
    tri_list, owner_list, col_list = [], [], []
    for k, (_, tris, base) in enumerate(layers):
        if len(tris) == 0:
            continue
        tri_list.append(tris)
        owner_list.append(np.full(len(tris), k, dtype=np.int32))
        col_list.append(base * _shade(tris, eye)[:, None])
    depth = np.full((h, w), np.inf)
    face = np.full((h, w), -1, dtype=np.int64)
    if tri_list:
        tris = np.concatenate(tri_list)
        cam_tris = np.stack([(tris - eye) @ right, (tris - eye) @ up, (tris - eye) @ fwd], axis=-1)
        focal = 0.5 * h / math.tan(math.radians(camera.vertical_fov) / 2.0)
        _kernels.rasterize(np.ascontiguousarray(cam_tris), NEAR, focal, depth, face)
        owners = np.concatenate(owner_list)
        colors = np.concatenate(col_list)
    else:
        owners = np.zeros(0, np.int32)
        colors = np.zeros((0, 3))
    hit = face >= 0
    id_map = np.full((h, w), -1, dtype=np.int32)
    id_map[hit] = owners[face[hit]]
    rgb = np.empty((h, w, 3))
    rgb[:] = np.asarray(BACKGROUND) / 255.0
    rgb[hit] = colors[face[hit]]
    return rgb, depth, id_map, ids


def _to_bytes(rgb: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def render(scene: Scene, camera: Optional[Camera] = None,
           tints: Optional[dict] = None) -> RenderImage:
    """Perspective z-buffered render of every object in ``scene``."""
    camera = camera or scene.camera
    layers = []
    for o in scene.objects:
        wm = o.world_mesh
        base = (tints or {}).get(o.id)
        if base is None:
            base = np.full(3, object_tint(o.id))
        layers.append((o.id, wm.vertices[wm.faces], np.broadcast_to(np.asarray(base, float), (len(wm.faces), 3))))
    rgb, depth, id_map, ids = _render_layers(layers, camera)
    return RenderImage(_to_bytes(rgb), depth, id_map, ids)


def blend_masks(img: RenderImage, masks: Sequence[np.ndarray], colors: Sequence[str],
                alpha: float = MASK_ALPHA) -> np.ndarray:
    out = img.rgb.astype(float)
    for m, c in zip(masks, colors):
        out[m] = (1.0 - alpha) * out[m] + alpha * np.asarray(PALETTE[c], float)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _check_colors(colors: Sequence[str], n: int) -> None:
    if len(colors) != n:
        raise ValueError("need exactly one color per highlighted item")
    if len(set(colors)) != len(colors):
        raise ValueError("duplicate colors in overlay")
    for c in colors:
        if c not in PALETTE:
            raise ValueError(f"unknown color {c!r}")


def render_object_masks(scene: Scene, candidates: Sequence[str], colors: Sequence[str],
                        base: Optional[RenderImage] = None) -> np.ndarray:
    """Scene render with each candidate's visible pixels tinted its color."""
    _check_colors(colors, len(candidates))
    known = set(scene.ids)
    for c in candidates:
        if c not in known:
            raise KeyError(f"unknown object id {c!r}")
    img = base if base is not None else render(scene)
    return blend_masks(img, [img.mask(c) for c in candidates], colors)


def overview_camera(lo: np.ndarray, hi: np.ndarray, view_dir=(0.6, -0.8, 0.6),
                    resolution=(512, 512), fov: float = 40.0) -> Camera:
    """Camera looking at a box from ``view_dir`` far enough to frame it."""
    center = (lo + hi) / 2.0
    radius = max(float(np.linalg.norm(hi - lo)) / 2.0, 1e-3)
    d = np.asarray(view_dir, float)
    d /= np.linalg.norm(d)
    dist = 1.15 * radius / math.sin(math.radians(fov) / 2.0)
    up = (0.0, 0.0, 1.0) if abs(d[2]) < 0.95 else (0.0, 1.0, 0.0)
    return Camera(tuple(center + dist * d), tuple(center), up, fov, resolution)


def _surface_view(surfaces: Sequence[InteractionSurface]) -> np.ndarray:
    """Three-quarter view direction, mirrored so it looks onto the surfaces' front."""
    d = np.array([0.6, -0.8, 0.6])
    if surfaces:
        n = np.mean([s.normal for s in surfaces], axis=0)
        for k in range(3):
            if abs(n[k]) > 0.5 and np.sign(n[k]) != np.sign(d[k]):
                d[k] = -d[k]
    return d


def render_surface_overlay(mesh: TriMesh, surfaces: Sequence[InteractionSurface],
                           colors: Sequence[str], resolution=(512, 512)) -> np.ndarray:
    """Object in its canonical frame with surface polygons overlaid in color."""
    _check_colors(colors, len(surfaces))
    for s in surfaces:
        if len(s.polygon) < 3:
            raise ValueError("empty surface polygon")
    lo, hi = mesh.bounds()
    for s in surfaces:
        lo = np.minimum(lo, s.polygon.min(axis=0))
        hi = np.maximum(hi, s.polygon.max(axis=0))
    cam = overview_camera(lo, hi, _surface_view(surfaces), resolution)
    gray = np.full((len(mesh.faces), 3), 0.8)
    obj_layer = ("object", mesh.vertices[mesh.faces], gray)
    base_rgb, _, _, _ = _render_layers([obj_layer], cam)
    if not surfaces:
        return _to_bytes(base_rgb)
    lift = 0.004 * float(np.linalg.norm(hi - lo))
    layers = [obj_layer]
    for k, s in enumerate(surfaces):
        poly = s.polygon + lift * s.normal
        idx = np.array([[0, i, i + 1] for i in range(1, len(poly) - 1)])
        layers.append((f"surface-{k}", poly[idx], np.ones((len(idx), 3))))
    _, _, id_map, _ = _render_layers(layers, cam)
    out = base_rgb * 255.0
    for k, c in enumerate(colors):
        m = id_map == k + 1
        out[m] = (1.0 - MASK_ALPHA) * out[m] + MASK_ALPHA * np.asarray(PALETTE[c], float)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def visible_fraction(scene: Scene, placed_id: str, full: Optional[RenderImage] = None) -> float:
    """Pixels the object owns in the scene over pixels it owns rendered alone."""
    scene.get(placed_id)
    alone = render(scene.subset([placed_id])).pixel_count(placed_id)
    if alone == 0:
        return 0.0
    full = full if full is not None else render(scene)
    return min(full.pixel_count(placed_id) / alone, 1.0)


def is_visible(fraction: float) -> bool:
    return fraction >= VISIBLE_THRESHOLD


def side_by_side(panels: Sequence[np.ndarray], colors: Sequence[str], border: int = 8) -> np.ndarray:
    """Concatenate equal-height panels, each framed in its color."""
    _check_colors(colors, len(panels))
    framed = []
    for p, c in zip(panels, colors):
        h, w = p.shape[:2]
        f = np.empty((h + 2 * border, w + 2 * border, 3), np.uint8)
        f[:] = PALETTE[c]
        f[border:border + h, border:border + w] = p
        framed.append(f)
    return np.concatenate(framed, axis=1)
