"""Synthetic placement tasks with exact groundtruth and scripted judges.

Every fixture lives in a small furnished room (floor at z=0, back wall
face at y=2). The groundtruth placement satisfies its hand-built
constraints exactly, and ``script.json`` answers every judge query the
pipeline asks for that task.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .client import CachedClient, ScriptedClient
from .constraints import ConstraintInstance, constraints_to_json
from .evaluation import PlacementTask
from .pipeline import PipelineConfig, parse_outline, place
from .scene import (
    Camera,
    PlacementTransform,
    Pose,
    Scene,
    SceneObject,
    TriMesh,
    box_mesh,
    cylinder_mesh,
    merge_meshes,
    save_scene,
    write_obj,
)
from .surfaces import BBOX_FACE, MESH_CLUSTER, InteractionSurface

logger = logging.getLogger(__name__)

UP, DOWN = (0, 0, 1), (0, 0, -1)
LEFT, RIGHT = (-1, 0, 0), (1, 0, 0)
FRONT, BACK = (0, -1, 0), (0, 1, 0)


def rect(center, a, b, normal, source: str = MESH_CLUSTER) -> InteractionSurface:
    """Parallelogram ``center +- a +- b``, wound counterclockwise about ``normal``."""
    c, a, b, n = (np.asarray(x, float) for x in (center, a, b, normal))
    if np.cross(a, b) @ n < 0:
        a, b = b, a
    return InteractionSurface(np.array([c - a - b, c + a - b, c + a + b, c - a + b]), n, source)


def disc(center, radius: float, normal, segments: int = 24) -> InteractionSurface:
    ang = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    pts = np.column_stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(segments)])
    if normal[2] < 0:
        pts = pts[::-1]
    return InteractionSurface(pts + center, normal)


@dataclass
class Fixture:
    name: str
    instruction: str
    objects: list                 # (id, canonical mesh, translation, caption)
    target: TriMesh
    camera: Camera
    groundtruth: PlacementTransform
    outline: list                 # outline records as the model would emit them
    anchors: dict                 # anchor description -> object id
    directions: dict              # surface description -> direction label
    surfaces: dict                # surface description -> point in the owner's canonical frame
    params_cm: list               # per outline record: centimeters or None
    constraints: list = field(default_factory=list)   # hand-built, world frame anchors

    def scene(self) -> Scene:
        objs = tuple(SceneObject(oid, mesh, Pose(np.eye(3), np.asarray(t, float)), cap)
                     for oid, mesh, t, cap in self.objects)
        return Scene(objs, self.camera)

    def script(self) -> dict:
        triplets = parse_outline(self.outline).triplets
        params = {t.relation: cm for t, cm in zip(triplets, self.params_cm) if cm is not None}
        return {"outline": self.outline, "anchors": self.anchors, "directions": self.directions,
                "surfaces": {k: list(v) for k, v in self.surfaces.items()}, "params": params,
                "groundtruth": self.groundtruth.to_json()}


def _rec(kind: str, s1: str, s2: str, const=None) -> dict:
    out = {"constraint": kind, "surface1": s1, "surface2": s2}
    if const is not None:
        out["const"] = const
    return out


def _room(walls=("back", "left", "right")) -> list:
    objs = [("floor", box_mesh((4.0, 4.0, 0.02), (0, 0, -0.01)), (0, 0, 0), "wooden floor")]
    slab = {"back": ((4.0, 0.1, 2.6), (0.0, 2.05, 0.0)),
            "left": ((0.1, 4.0, 2.6), (-2.05, 0.0, 0.0)),
            "right": ((0.1, 4.0, 2.6), (2.05, 0.0, 0.0))}
    for w in walls:
        size, at = slab[w]
        objs.append((f"{w}_wall", box_mesh(size, (0, 0, 1.3)), at, f"{w} wall"))
    return objs


# wall and floor surfaces in world coordinates
BACK_WALL_FACE = rect((0, 2.0, 1.3), (2.0, 0, 0), (0, 0, 1.3), FRONT)
LEFT_WALL_FACE = rect((-2.0, 0, 1.3), (0, 2.0, 0), (0, 0, 1.3), RIGHT)
FLOOR_TOP = rect((0, 0, 0), (2.0, 0, 0), (0, 2.0, 0), UP)


def table_mesh() -> TriMesh:
    parts = [box_mesh((1.2, 0.8, 0.04), (0, 0, 0.73))]
    for sx in (-0.55, 0.55):
        for sy in (-0.3, 0.3):
            parts.append(box_mesh((0.05, 0.05, 0.71), (sx, sy, 0.355)))
    return merge_meshes(parts)


def bookcase_mesh() -> TriMesh:
    """0.8 wide, 0.3 deep, 1.5 tall; shelves at 0.06, 0.56 and 1.06 plus a top board."""
    parts = [box_mesh((0.02, 0.3, 1.5), (x, 0, 0.75)) for x in (-0.39, 0.39)]
    parts.append(box_mesh((0.76, 0.01, 1.5), (0, 0.145, 0.75)))
    for top in SHELF_LEVELS:
        parts.append(box_mesh((0.76, 0.29, 0.02), (0, -0.005, top - 0.01)))
    parts.append(box_mesh((0.8, 0.3, 0.02), (0, 0, 1.49)))
    return merge_meshes(parts)


SHELF_LEVELS = (0.06, 0.56, 1.06)


def lamp_mesh() -> TriMesh:
    return merge_meshes([cylinder_mesh(0.15, 0.03), cylinder_mesh(0.015, 1.3, base_z=0.03),
                         cylinder_mesh(0.2, 0.25, base_z=1.3)])


def cup_on_table(rng: np.random.Generator) -> Fixture:
    tx, ty = 0.3 + rng.uniform(-0.1, 0.1), 0.4
    gt = PlacementTransform((tx - 0.5, ty - 0.3, 0.75), 0.0)
    top, front, left = "top of the table", "front edge of the table", "left edge of the table"
    bottom, cfront, cleft = "bottom of the target object", "front of the target object", "left side of the target object"
    outline = [_rec("Contact", top, bottom), _rec("NoOverhang", bottom, top), _rec("Parallel", top, bottom),
               _rec("CloseTo", cfront, front, 8), _rec("CloseTo", cleft, left, 8)]
    cup_bottom = disc((0, 0, 0), 0.04, DOWN)
    table_top = rect((tx, ty, 0.75), (0.6, 0, 0), (0, 0.4, 0), UP)
    constraints = [
        ConstraintInstance("Contact", table_top, cup_bottom),
        ConstraintInstance("NoOverhang", table_top, cup_bottom, target_first=True),
        ConstraintInstance("Parallel", table_top, cup_bottom),
        ConstraintInstance("CloseTo", rect((tx, ty - 0.4, 0.73), (0.6, 0, 0), (0, 0, 0.02), FRONT),
                           rect((0, -0.04, 0.05), (0.04, 0, 0), (0, 0, 0.05), FRONT, BBOX_FACE), 0.08, True),
        ConstraintInstance("CloseTo", rect((tx - 0.6, ty, 0.73), (0, 0.4, 0), (0, 0, 0.02), LEFT),
                           rect((-0.04, 0, 0.05), (0, 0.04, 0), (0, 0, 0.05), LEFT, BBOX_FACE), 0.08, True),
    ]
    return Fixture(
        "cup-on-table", "Put the cup on the table, near its front left corner.",
        _room() + [("table", table_mesh(), (tx, ty, 0), "wooden dining table")],
        cylinder_mesh(0.04, 0.1),
        Camera((tx - 0.2, -1.4, 1.7), (tx - 0.2, ty, 0.7), (0, 0, 1), 55.0),
        gt, outline,
        {top: "table", front: "table", left: "table"},
        {top: "up", bottom: "down", front: "front", cfront: "front", left: "left", cleft: "left"},
        {top: (0, 0, 0.75), bottom: (0, 0, 0), front: (0, -0.4, 0.73), cfront: (0, -0.04, 0.05),
         left: (-0.6, 0, 0.73), cleft: (-0.04, 0, 0.05)},
        [None, None, None, 8, 8], constraints)


def book_on_shelf(rng: np.random.Generator) -> Fixture:
    bx, by = -1.0 + rng.uniform(-0.1, 0.1), 1.85
    gt = PlacementTransform((bx - 0.345, by - 0.005, 0.56), 0.0)
    shelf, panel = "middle shelf of the bookcase", "inner side of the bookcase's left panel"
    bottom, bleft = "bottom of the target object", "left side of the target object"
    outline = [_rec("Contact", shelf, bottom), _rec("NoOverhang", bottom, shelf),
               _rec("CloseTo", bleft, panel, 5)]
    book_bottom = rect((0, 0, 0), (0.015, 0, 0), (0, 0.1, 0), DOWN)
    shelf_top = rect((bx, by - 0.005, 0.56), (0.38, 0, 0), (0, 0.145, 0), UP)
    constraints = [
        ConstraintInstance("Contact", shelf_top, book_bottom),
        ConstraintInstance("NoOverhang", shelf_top, book_bottom, target_first=True),
        ConstraintInstance("CloseTo", rect((bx - 0.38, by, 0.75), (0, 0.15, 0), (0, 0, 0.75), RIGHT),
                           rect((-0.015, 0, 0.125), (0, 0.1, 0), (0, 0, 0.125), LEFT), 0.05, True),
    ]
    return Fixture(
        "book-on-middle-shelf", "Stand the book on the middle shelf of the bookcase, at its left end.",
        _room() + [("bookcase", bookcase_mesh(), (bx, by, 0), "tall wooden bookcase"),
                   ("armchair", box_mesh((0.8, 0.8, 0.8), (0, 0, 0.4)), (0.9, 0.6, 0), "grey armchair")],
        box_mesh((0.03, 0.2, 0.25), (0, 0, 0.125)),
        Camera((bx + 0.3, 0.2, 1.3), (bx, by, 0.7), (0, 0, 1), 55.0),
        gt, outline,
        {shelf: "bookcase", panel: "bookcase"},
        {shelf: "up", bottom: "down", panel: "right", bleft: "left"},
        {shelf: (0, -0.005, 0.56), bottom: (0, 0, 0), panel: (-0.38, 0, 0.75), bleft: (-0.015, 0, 0.125)},
        [None, None, 5], constraints)


def picture_on_wall(rng: np.random.Generator) -> Fixture:
    cx = 0.8 + rng.uniform(-0.1, 0.1)
    gt = PlacementTransform((cx, 2.0 - 0.015, 1.1), 0.0)
    wall, console, floor = "front face of the back wall", "top of the console table", "top of the floor"
    back, bottom, face = "back of the target object", "bottom of the target object", "front of the target object"
    # the front face must stay in front of the wall, otherwise a box turned
    # half a turn satisfies Contact from inside the wall
    outline = [_rec("Contact", back, wall), _rec("Parallel", back, wall), _rec("NoOverhang", back, wall),
               _rec("InFrontPlane", wall, face), _rec("Above", bottom, console),
               _rec("CloseTo", bottom, console, 40), _rec("FarFrom", bottom, floor, 100)]
    pic_back = rect((0, 0.015, 0.2), (0.25, 0, 0), (0, 0, 0.2), BACK)
    pic_bottom = rect((0, 0, 0), (0.25, 0, 0), (0, 0.015, 0), DOWN)
    console_top = rect((cx, 1.8, 0.8), (0.3, 0, 0), (0, 0.2, 0), UP)
    constraints = [
        ConstraintInstance("Contact", BACK_WALL_FACE, pic_back, target_first=True),
        ConstraintInstance("Parallel", BACK_WALL_FACE, pic_back, target_first=True),
        ConstraintInstance("NoOverhang", BACK_WALL_FACE, pic_back, target_first=True),
        ConstraintInstance("InFrontPlane", BACK_WALL_FACE, rect((0, -0.015, 0.2), (0.25, 0, 0), (0, 0, 0.2), FRONT)),
        ConstraintInstance("InFrontPlane", console_top, pic_bottom),
        ConstraintInstance("CloseTo", console_top, pic_bottom, 0.4, True),
        ConstraintInstance("FarFrom", FLOOR_TOP, pic_bottom, 1.0, True),
    ]
    return Fixture(
        "picture-on-wall", "Hang the picture on the back wall above the console table.",
        _room() + [("console", box_mesh((0.6, 0.4, 0.8), (0, 0, 0.4)), (cx, 1.8, 0), "narrow console table"),
                   ("sofa", box_mesh((1.8, 0.9, 0.8), (0, 0, 0.4)), (-0.9, 1.2, 0), "three-seat sofa")],
        box_mesh((0.5, 0.03, 0.4), (0, 0, 0.2)),
        Camera((cx - 0.3, -1.2, 1.6), (cx - 0.1, 2.0, 1.1), (0, 0, 1), 55.0),
        gt, outline,
        {wall: "back_wall", console: "console", floor: "floor"},
        {wall: "front", console: "up", floor: "up", back: "back", bottom: "down", face: "front"},
        {wall: (0, -0.05, 1.3), console: (0, 0, 0.8), floor: (0, 0, 0), back: (0, 0.015, 0.2), bottom: (0, 0, 0),
         face: (0, -0.015, 0.2)},
        [None, None, None, None, None, 40, 100], constraints)


def lamp_in_corner(rng: np.random.Generator) -> Fixture:
    gt = PlacementTransform((-1.75, 1.75, 0.0), 0.0)
    floor, wall, lwall = "top of the floor", "front face of the back wall", "inner face of the left wall"
    bottom, back, lside = "bottom of the target object", "back of the target object", "left side of the target object"
    outline = [_rec("Contact", floor, bottom), _rec("NoOverhang", bottom, floor), _rec("CloseTo", back, wall, 15),
               _rec("CloseTo", lside, lwall, 15), _rec("InFrontPlane", lwall, lside)]
    lamp_bottom = disc((0, 0, 0), 0.15, DOWN)
    lamp_back = rect((0, 0.2, 0.775), (0.2, 0, 0), (0, 0, 0.775), BACK, BBOX_FACE)
    lamp_left = rect((-0.2, 0, 0.775), (0, 0.2, 0), (0, 0, 0.775), LEFT, BBOX_FACE)
    constraints = [
        ConstraintInstance("Contact", FLOOR_TOP, lamp_bottom),
        ConstraintInstance("NoOverhang", FLOOR_TOP, lamp_bottom, target_first=True),
        ConstraintInstance("CloseTo", BACK_WALL_FACE, lamp_back, 0.15, True),
        ConstraintInstance("CloseTo", LEFT_WALL_FACE, lamp_left, 0.15, True),
        ConstraintInstance("InFrontPlane", LEFT_WALL_FACE, lamp_left),
    ]
    sx = 0.2 + rng.uniform(-0.1, 0.1)
    return Fixture(
        "lamp-in-corner", "Stand the floor lamp in the back left corner of the room.",
        _room(("back", "left")) + [("sofa", box_mesh((1.8, 0.9, 0.8), (0, 0, 0.4)), (sx, 1.4, 0), "leather sofa"),
                                   ("side_table", box_mesh((0.5, 0.5, 0.55), (0, 0, 0.275)), (sx + 1.3, 1.5, 0),
                                    "small side table")],
        lamp_mesh(),
        Camera((0.6, -1.6, 1.8), (-1.2, 1.4, 0.7), (0, 0, 1), 60.0),
        gt, outline,
        {floor: "floor", wall: "back_wall", lwall: "left_wall"},
        {floor: "up", wall: "front", lwall: "right", bottom: "down", back: "back", lside: "left"},
        {floor: (0, 0, 0), wall: (0, -0.05, 1.3), lwall: (0.05, 0, 1.3), bottom: (0, 0, 0),
         back: (0, 0.2, 0.775), lside: (-0.2, 0, 0.775)},
        [None, None, 15, 15, None], constraints)


def tv_against_wall(rng: np.random.Generator) -> Fixture:
    cx = -0.5 + rng.uniform(-0.1, 0.1)
    gt = PlacementTransform((cx, 2.0 - 0.03, 1.0), 0.0)
    wall, floor, cab = "front face of the back wall", "top of the floor", "top of the TV cabinet"
    cabl = "left side of the TV cabinet"
    back, bottom, tleft = "back of the target object", "bottom of the target object", "left side of the target object"
    screen = "front of the target object"
    outline = [_rec("Contact", back, wall), _rec("NoOverhang", back, wall), _rec("Parallel", back, wall),
               _rec("InFrontPlane", wall, screen), _rec("FarFrom", bottom, floor, 90),
               _rec("CloseTo", bottom, cab, 60), _rec("CloseTo", tleft, cabl, 55)]
    tv_back = rect((0, 0.03, 0.3), (0.5, 0, 0), (0, 0, 0.3), BACK)
    tv_bottom = rect((0, 0, 0), (0.5, 0, 0), (0, 0.03, 0), DOWN)
    tv_left = rect((-0.5, 0, 0.3), (0, 0.03, 0), (0, 0, 0.3), LEFT)
    constraints = [
        ConstraintInstance("Contact", BACK_WALL_FACE, tv_back, target_first=True),
        ConstraintInstance("NoOverhang", BACK_WALL_FACE, tv_back, target_first=True),
        ConstraintInstance("Parallel", BACK_WALL_FACE, tv_back, target_first=True),
        ConstraintInstance("InFrontPlane", BACK_WALL_FACE, rect((0, -0.03, 0.3), (0.5, 0, 0), (0, 0, 0.3), FRONT)),
        ConstraintInstance("FarFrom", FLOOR_TOP, tv_bottom, 0.9, True),
        ConstraintInstance("CloseTo", rect((cx, 1.775, 0.5), (0.5, 0, 0), (0, 0.225, 0), UP), tv_bottom, 0.6, True),
        ConstraintInstance("CloseTo", rect((cx - 0.5, 1.775, 0.25), (0, 0.225, 0), (0, 0, 0.25), LEFT),
                           tv_left, 0.55, True),
    ]
    return Fixture(
        "tv-against-wall", "Mount the TV on the back wall above the TV cabinet.",
        _room() + [("tv_cabinet", box_mesh((1.0, 0.45, 0.5), (0, 0, 0.25)), (cx, 1.775, 0), "low TV cabinet"),
                   ("sofa", box_mesh((1.8, 0.9, 0.8), (0, 0, 0.4)), (cx, -0.6, 0), "sofa facing the wall")],
        box_mesh((1.0, 0.06, 0.6), (0, 0, 0.3)),
        Camera((cx + 0.4, -1.8, 2.0), (cx, 2.0, 0.9), (0, 0, 1), 55.0),
        gt, outline,
        {wall: "back_wall", floor: "floor", cab: "tv_cabinet", cabl: "tv_cabinet"},
        {wall: "front", floor: "up", cab: "up", cabl: "left", back: "back", bottom: "down", tleft: "left",
         screen: "front"},
        {wall: (0, -0.05, 1.3), floor: (0, 0, 0), cab: (0, 0, 0.5), cabl: (-0.5, 0, 0.25),
         back: (0, 0.03, 0.3), bottom: (0, 0, 0), tleft: (-0.5, 0, 0.3), screen: (0, -0.03, 0.3)},
        [None, None, None, None, 90, 60, 55], constraints)


BUILDERS: dict[str, Callable[[np.random.Generator], Fixture]] = {
    "cup-on-table": cup_on_table,
    "book-on-middle-shelf": book_on_shelf,
    "picture-on-wall": picture_on_wall,
    "lamp-in-corner": lamp_in_corner,
    "tv-against-wall": tv_against_wall,
}


def build_fixture(name: str, seed: int = 0) -> Fixture:
    # one stream per fixture so adding fixtures never shifts the others
    rng = np.random.default_rng([seed, list(BUILDERS).index(name)])
    return BUILDERS[name](rng)


def write_fixture(fx: Fixture, root, tries: int = 4) -> PlacementTask:
    root = Path(root)
    (root / "meshes").mkdir(parents=True, exist_ok=True)
    objs = []
    for oid, mesh, t, cap in fx.objects:
        write_obj(mesh, root / "meshes" / f"{oid}.obj")
        objs.append(SceneObject(oid, mesh, Pose(np.eye(3), np.asarray(t, float)), cap, f"meshes/{oid}.obj"))
    save_scene(Scene(tuple(objs), fx.camera), root / "scene.json")
    write_obj(fx.target, root / "object.obj")
    task = PlacementTask(fx.name, root / "scene.json", root / "object.obj", fx.instruction, fx.groundtruth, tries)
    _dump(root / "task.json", task.to_json())
    _dump(root / "script.json", fx.script())
    _dump(root / "constraints.json", constraints_to_json(fx.constraints))
    return task


def _dump(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2) + "\n")


def record_cache(task: PlacementTask, seeds=(0,), config: Optional[PipelineConfig] = None) -> None:
    """Pre-record the judge replies ``place`` needs for the given seeds."""
    from .scene import load_obj, load_scene

    scene, obj = load_scene(task.scene_path), load_obj(task.object_path)
    client = CachedClient(task.root / "cache", "record", ScriptedClient.load(task.root / "script.json"))
    base = config or PipelineConfig()
    for seed in seeds:
        cfg = PipelineConfig(seed, base.batch_size, base.prune_batch_size, base.max_candidates, base.solver,
                             base.extraction, base.object_id)
        place(scene, obj, task.instruction, cfg, client)


def generate_fixtures(out_dir, seed: int = 0, record: bool = True, tries: int = 4,
                      names=None) -> list[PlacementTask]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(names or BUILDERS)
    tasks = [write_fixture(build_fixture(n, seed), out / n, tries) for n in names]
    _dump(out / "suite.json", {"tasks": names, "seed": seed})
    if record:
        for t in tasks:
            record_cache(t)
    return tasks
