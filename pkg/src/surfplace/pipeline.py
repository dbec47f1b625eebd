"""From a text instruction to a placement: outline, grounding, solving, pruning."""

from __future__ import annotations

import ast
import json
import logging
import os
import re
import string
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .client import ModelClient, request_key
from .constraints import ConstraintInstance, ConstraintKind, EnergyModel, constraints_to_json
from .raster import (
    blend_masks,
    png_bytes,
    render,
    render_object_masks,
    render_surface_overlay,
    side_by_side,
)
from .scene import PlacementTransform, Scene, SceneObject, TriMesh, placed_object, save_scene, write_obj
from .selection import Candidate, JudgeAbstained, JudgeTranscript, TranscriptEntry, select
from .solver import CandidateSet, SolverConfig, solve
from .surfaces import Direction, ExtractionConfig, InteractionSurface, extract_surfaces

logger = logging.getLogger(__name__)

PROMPT_DIR = Path(__file__).parent / "prompts"
MIN_DIST_M = 0.01
MAX_DIST_M = 10.0


class PipelineError(RuntimeError):
    """Failure inside one named pipeline stage."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


class ParseError(ValueError):
    pass


@lru_cache(maxsize=None)
def template(name: str) -> string.Template:
    return string.Template((PROMPT_DIR / f"{name}.txt").read_text())


def fill(name: str, **values) -> str:
    return template(name).substitute(**values)


# --------------------------------------------------------------------------
# reply parsing
# --------------------------------------------------------------------------

_FENCE = re.compile(r"```(?:json|JSON)?[ \t]*\n?(.*?)```", re.DOTALL)
_ANSWER = re.compile(r"""["']?final_answer["']?\s*:\s*["']?([A-Za-z0-9_.\-]+)""")


def extract_json(reply: str) -> Any:
    """Parse the last fenced block of a reply.

    Tries strict JSON, then a Python literal (models often emit single
    quotes), then a bare ``final_answer`` field.
    """
    blocks = _FENCE.findall(reply or "")
    if not blocks:
        raise ParseError("no fenced json block")
    body = blocks[-1].strip()
    try:
        return json.loads(body)
    except json.JSONDecodeError:
        pass
    try:
        return ast.literal_eval(body)
    except (ValueError, SyntaxError):
        pass
    m = _ANSWER.search(body)
    if m:
        return {"final_answer": m.group(1)}
    raise ParseError("fenced block is not valid json")


def final_answer(reply: str) -> Any:
    data = extract_json(reply)
    if isinstance(data, dict) and "final_answer" in data:
        return data["final_answer"]
    raise ParseError("missing final_answer")


def parse_color(reply: str, colors: Sequence[str]) -> Optional[str]:
    ans = str(final_answer(reply)).strip().lower()
    if ans == "none":
        return None
    if ans not in colors:
        raise ParseError(f"answer {ans!r} is not one of {list(colors)}")
    return ans


def parse_direction(reply: str) -> Direction:
    ans = str(final_answer(reply)).strip()
    if ans.lower() == "none":
        raise ParseError("direction may not be none")
    try:
        return Direction.parse(ans)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def parse_grade(reply: str) -> int:
    ans = final_answer(reply)
    try:
        grade = int(ans)
    except (TypeError, ValueError):
        raise ParseError(f"grade {ans!r} is not an integer") from None
    if grade != ans and str(grade) != str(ans).strip():
        raise ParseError(f"grade {ans!r} is not an integer")
    if not 1 <= grade <= 4:
        raise ParseError(f"grade {grade} outside 1..4")
    return grade


def parse_number(reply: str) -> float:
    data = extract_json(reply)
    if isinstance(data, dict):
        vals = [data["const"]] if "const" in data else list(data.values())
    elif isinstance(data, list):
        vals = data
    else:
        vals = [data]
    for v in vals:
        if isinstance(v, bool):
            continue
        if isinstance(v, (int, float)):
            return float(v)
        try:
            return float(str(v).strip())
        except ValueError:
            continue
    raise ParseError("no numeric value in reply")


# --------------------------------------------------------------------------
# outlines
# --------------------------------------------------------------------------

TARGET_MARKER = "target object"


@dataclass(frozen=True)
class OutlineTriplet:
    """One relation between a scene surface and a surface of the new object.

    ``target_first`` means the new object's surface is the first argument.
    ``above`` marks the doc-string ``Above`` relation, compiled to
    InFrontPlane whose first (lower) surface is forced to face up.
    """

    kind: ConstraintKind
    anchor_desc: str
    target_desc: str
    params: Any = None
    target_first: bool = False
    above: bool = False
    source_kind: str = ""

    @property
    def relation(self) -> str:
        name = self.source_kind or self.kind.value
        if self.above:
            first, second = (self.anchor_desc, self.target_desc) if self.target_first else (self.target_desc, self.anchor_desc)
            return f"{name}({second}, {first})"
        first, second = (self.target_desc, self.anchor_desc) if self.target_first else (self.anchor_desc, self.target_desc)
        return f"{name}({first}, {second})"

    def to_json(self) -> dict:
        out = {"kind": self.kind.value, "anchor": self.anchor_desc, "target": self.target_desc,
               "target_first": self.target_first, "relation": self.relation}
        if self.above:
            out["above"] = True
        if self.params is not None:
            out["params"] = self.params
        return out


@dataclass
class ConstraintOutline:
    triplets: list

    def to_json(self) -> list:
        return [t.to_json() for t in self.triplets]


def _record_kind(rec: dict) -> str:
    for key in ("constraint", "constraints", "kind", "function"):
        if key in rec:
            return str(rec[key])
    raise ParseError("record without a constraint name")


def parse_outline(data: Any) -> ConstraintOutline:
    if isinstance(data, dict):
        data = next((v for v in data.values() if isinstance(v, list)), None)
    if not isinstance(data, list) or not data:
        raise ParseError("outline must be a non-empty list")
    triplets = []
    for rec in data:
        if not isinstance(rec, dict):
            raise ParseError("outline entries must be objects")
        name = _record_kind(rec).strip()
        above = name.replace(" ", "").lower() == "above"
        try:
            kind = ConstraintKind.IN_FRONT_PLANE if above else ConstraintKind.parse(name)
        except ValueError:
            raise ParseError(f"unknown constraint kind {name!r}") from None
        s1, s2 = str(rec.get("surface1", "")), str(rec.get("surface2", ""))
        t1, t2 = TARGET_MARKER in s1.lower(), TARGET_MARKER in s2.lower()
        if t1 == t2:
            raise ParseError(f"exactly one surface of {name} must be on the target object")
        if above:
            # Above(s1, s2): s1 is higher, so the lower s2 is the plane argument
            first, second = s2, s1
            target_first = t2
        else:
            first, second = s1, s2
            target_first = t1
        target, anchor = (first, second) if target_first else (second, first)
        params = rec.get("const", rec.get("params"))
        triplets.append(OutlineTriplet(kind, anchor, target, params, target_first, above, name))
    if triplets[0].kind is not ConstraintKind.CONTACT:
        raise ParseError("outline must start with a Contact relation")
    return ConstraintOutline(triplets)


# --------------------------------------------------------------------------
# querying with one retry
# --------------------------------------------------------------------------

class _Asker:
    def __init__(self, client: ModelClient, transcript: Optional[JudgeTranscript]):
        self.client = client
        self.transcript = transcript

    def ask(self, stage: str, prompt: str, images: Sequence[bytes], tag: dict,
            parse: Callable[[str], Any], log: bool = True):
        reason = ""
        for attempt in range(2):
            text = prompt if attempt == 0 else prompt + fill("retry", reason=reason)
            reply = self.client.send(text, list(images), tag)
            try:
                value = parse(reply)
            except ParseError as exc:
                reason = str(exc)
                logger.warning("%s: unusable reply (%s)%s", stage, reason, "; retrying" if attempt == 0 else "")
                if log and self.transcript is not None:
                    self.transcript.append(TranscriptEntry(stage, request_key(text, images), [], [], None))
                continue
            if log and self.transcript is not None:
                self.transcript.append(TranscriptEntry(stage, request_key(text, images), [], [], _jsonable(value)))
            return value
        raise PipelineError(stage, f"unusable reply after retry: {reason}")


def _jsonable(v):
    if isinstance(v, Direction):
        return v.value
    if isinstance(v, ConstraintOutline):
        return v.to_json()
    return v


class ModelJudge:
    """Adapts a chat client to the selection judge protocol."""

    def __init__(self, asker: _Asker, stage: str, prompt: Callable[[Sequence[str]], str],
                 tag: Callable[[Sequence[Candidate], Sequence[str]], dict],
                 context: Sequence[bytes] = ()):
        self.asker = asker
        self.stage = stage
        self.prompt = prompt
        self.tag = tag
        self.context = list(context)

    def choose(self, objective, batch, colors, image):
        images = self.context + ([image] if image is not None else [])
        return self.asker.ask(self.stage, self.prompt(colors), images, self.tag(batch, colors),
                              lambda r: parse_color(r, colors), log=False)


def _choices(colors: Sequence[str]) -> str:
    return "/".join(colors)


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def generate_outline(scene: Scene, instruction: str, client: ModelClient,
                     transcript: Optional[JudgeTranscript] = None,
                     scene_png: Optional[bytes] = None) -> ConstraintOutline:
    if not instruction or not instruction.strip():
        raise ValueError("instruction must be non-empty")
    img = scene_png if scene_png is not None else render(scene).png_bytes()
    prompt = fill("outline", instruction=instruction, library=template("library").template.rstrip())
    asker = _Asker(client, transcript)
    return asker.ask("outline", prompt, [img], {"stage": "outline"}, lambda r: parse_outline(extract_json(r)))


def visible_objects(scene: Scene, image=None) -> list[str]:
    img = image if image is not None else render(scene)
    return [oid for oid in scene.ids if img.pixel_count(oid) > 0]


def select_anchor(scene: Scene, anchor_desc: str, client: ModelClient, *, instruction: str = "",
                  relation: str = "", m: int = 3, seed: int = 0,
                  transcript: Optional[JudgeTranscript] = None) -> SceneObject:
    base = render(scene)
    ids = visible_objects(scene, base)
    if not ids:
        raise PipelineError("anchor", "no visible objects in the scene")
    asker = _Asker(client, transcript)
    judge = ModelJudge(
        asker, "anchor",
        lambda colors: fill("anchor", instruction=instruction, relation=relation, anchor_desc=anchor_desc,
                            choices=_choices(colors)),
        lambda batch, colors: {"stage": "anchor", "desc": anchor_desc,
                               "options": {c: b.id for c, b in zip(colors, batch)}},
    )

    def draw(batch, colors):
        return png_bytes(render_object_masks(scene, [b.id for b in batch], colors, base))

    try:
        won = select([Candidate(i) for i in ids], anchor_desc, m, judge, render=draw, seed=seed,
                     transcript=transcript, stage="anchor")
    except JudgeAbstained as exc:
        raise PipelineError("anchor", str(exc)) from None
    return scene.get(won.id)


def extract_direction(context: Sequence[bytes], surface_desc: str, client: ModelClient, *,
                      role: str = "anchor", instruction: str = "", relation: str = "",
                      transcript: Optional[JudgeTranscript] = None) -> Direction:
    """Ask which way the described surface faces; ``context`` holds the scene and object images."""
    prompt = fill("direction", role=role, instruction=instruction, relation=relation, surface_desc=surface_desc)
    tag = {"stage": "direction", "role": role, "desc": surface_desc}
    return _Asker(client, transcript).ask("direction", prompt, context, tag, parse_direction)


def choose_surface(mesh: TriMesh, surfaces: Sequence[InteractionSurface], surface_desc: str,
                   client: ModelClient, *, role: str = "anchor", instruction: str = "", relation: str = "",
                   context: Sequence[bytes] = (), m: int = 3, seed: int = 0,
                   transcript: Optional[JudgeTranscript] = None) -> InteractionSurface:
    if not surfaces:
        raise PipelineError("surface", "no candidate surfaces")
    asker = _Asker(client, transcript)
    judge = ModelJudge(
        asker, "surface",
        lambda colors: fill("surface", role=role, instruction=instruction, relation=relation,
                            surface_desc=surface_desc, choices=_choices(colors)),
        lambda batch, colors: {"stage": "surface", "role": role, "desc": surface_desc,
                               "options": {c: surfaces[b.payload].centroid.tolist() for c, b in zip(colors, batch)}},
        context,
    )

    def draw(batch, colors):
        return png_bytes(render_surface_overlay(mesh, [surfaces[b.payload] for b in batch], colors))

    cands = [Candidate(f"surface-{i}", i) for i in range(len(surfaces))]
    try:
        won = select(cands, surface_desc, m, judge, render=draw, seed=seed, transcript=transcript, stage="surface")
    except JudgeAbstained as exc:
        raise PipelineError("surface", str(exc)) from None
    return surfaces[won.payload]


PARAM_DOCS = {
    ConstraintKind.CLOSE_TO: "const: the largest allowed distance between the two surfaces, in centimeters.",
    ConstraintKind.FAR_FROM: "const: the smallest allowed distance between the two surfaces, in centimeters.",
}


def estimate_params(triplet: OutlineTriplet, client: ModelClient, *, images: Sequence[bytes] = (),
                    instruction: str = "", transcript: Optional[JudgeTranscript] = None) -> float:
    """Distance parameter in meters (the model answers in centimeters)."""
    if not triplet.kind.has_distance:
        raise ValueError(f"{triplet.kind.value} has no continuous parameter")
    prompt = fill("params", instruction=instruction, relation=triplet.relation, param_doc=PARAM_DOCS[triplet.kind])
    tag = {"stage": "params", "desc": triplet.relation}
    cm = _Asker(client, transcript).ask("params", prompt, images, tag, parse_number)
    meters = cm / 100.0
    clamped = min(max(meters, MIN_DIST_M), MAX_DIST_M)
    if clamped != meters:
        logger.warning("distance %.4g m clamped to %.4g m", meters, clamped)
    return clamped


def placement_render(scene: Scene, obj: TriMesh, t: PlacementTransform, object_id: str) -> np.ndarray:
    """Scene plus the placed object, tinted red."""
    placed = scene.with_object(placed_object(object_id, obj, t))
    img = render(placed)
    return blend_masks(img, [img.mask(object_id)], ["red"])


def plausibility_prune(cands: CandidateSet, scene: Scene, obj: TriMesh, instruction: str,
                       client: ModelClient, *, m: int = 2, seed: int = 0, object_id: str = "placed",
                       transcript: Optional[JudgeTranscript] = None) -> PlacementTransform:
    if not cands.candidates:
        raise ValueError("no candidates to prune")
    if len(cands.candidates) == 1:
        return cands.candidates[0][0]
    panels: dict[int, np.ndarray] = {}

    def panel(i):
        if i not in panels:
            panels[i] = placement_render(scene, obj, cands.candidates[i][0], object_id)
        return panels[i]

    asker = _Asker(client, transcript)
    judge = ModelJudge(
        asker, "prune",
        lambda colors: fill("prune", instruction=instruction, count=len(colors), choices=_choices(colors)),
        lambda batch, colors: {"stage": "prune",
                               "options": {c: list(cands.candidates[b.payload][0].translation)
                                           for c, b in zip(colors, batch)}},
    )

    def draw(batch, colors):
        return png_bytes(side_by_side([panel(b.payload) for b in batch], colors))

    items = [Candidate(f"placement-{i}", i) for i in range(len(cands.candidates))]
    try:
        won = select(items, instruction, m, judge, render=draw, seed=seed, transcript=transcript, stage="prune")
    except JudgeAbstained:
        logger.warning("pruning judge abstained; keeping the lowest-energy candidate")
        return cands.candidates[0][0]
    return cands.candidates[won.payload][0]


def plausibility_score(image_png: bytes, instruction: str, client: ModelClient, *,
                       translation: Optional[Sequence[float]] = None,
                       transcript: Optional[JudgeTranscript] = None) -> int:
    prompt = fill("plausibility", instruction=instruction)
    tag = {"stage": "plausibility", "translation": None if translation is None else list(translation)}
    return _Asker(client, transcript).ask("plausibility", prompt, [image_png], tag, parse_grade)


# --------------------------------------------------------------------------
# end to end
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    batch_size: int = 3
    prune_batch_size: int = 2
    max_candidates: int = 16
    solver: SolverConfig = field(default_factory=SolverConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    object_id: str = "placed"


@dataclass
class PlacementResult:
    chosen: PlacementTransform
    energy: float
    feasible: bool
    all_feasible: CandidateSet
    outline: ConstraintOutline
    grounded: list
    transcript: JudgeTranscript
    anchors: dict = field(default_factory=dict)
    renders: dict = field(default_factory=dict)
    instruction: str = ""
    seed: int = 0

    @property
    def infeasible_fallback(self) -> bool:
        return not self.feasible

    def to_json(self) -> dict:
        return {
            "instruction": self.instruction,
            "seed": self.seed,
            "chosen": self.chosen.to_json(),
            "energy": self.energy,
            "feasible": self.feasible,
            "candidates": self.all_feasible.to_json(),
            "outline": self.outline.to_json(),
            "anchors": dict(self.anchors),
            "grounded": constraints_to_json(self.grounded)["constraints"],
            "transcript": [e.to_json() for e in self.transcript.entries],
            "renders": dict(self.renders),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def _stage(name: str):
    """Re-raise anything escaping a stage as a stage-tagged error."""
    class _Guard:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is None or isinstance(exc, PipelineError):
                return False
            raise PipelineError(name, f"{exc_type.__name__}: {exc}") from exc
    return _Guard()


def place(scene: Scene, obj: TriMesh, instruction: str, config: Optional[PipelineConfig] = None,
          client: Optional[ModelClient] = None, out_dir=None, scene_dir=None) -> PlacementResult:
    """Run every stage and return the chosen placement.

    Stages run breadth-first (all anchors, then all directions, then all
    surfaces, then parameters) so the transcript reads in stage order.
    """
    config = config or PipelineConfig()
    if client is None:
        raise ValueError("a model client is required")
    if not instruction or not instruction.strip():
        raise ValueError("instruction must be non-empty")
    if len(obj) == 0:
        raise ValueError("object mesh is empty")
    object_id = config.object_id
    while object_id in scene.ids:
        object_id += "_"
    transcript = JudgeTranscript(mode=getattr(client, "mode", "live"))
    seed = config.seed

    base = render(scene)
    with _stage("outline"):
        outline = generate_outline(scene, instruction, client, transcript, base.png_bytes())
    triplets = outline.triplets

    anchors: dict[str, SceneObject] = {}
    with _stage("anchor"):
        for t in triplets:
            if t.anchor_desc not in anchors:
                anchors[t.anchor_desc] = select_anchor(scene, t.anchor_desc, client, instruction=instruction,
                                                       relation=t.relation, m=config.batch_size, seed=seed,
                                                       transcript=transcript)

    masked: dict[str, bytes] = {}
    plots: dict[str, bytes] = {}

    def scene_ctx(anchor: SceneObject) -> bytes:
        if anchor.id not in masked:
            masked[anchor.id] = png_bytes(render_object_masks(scene, [anchor.id], ["red"], base))
        return masked[anchor.id]

    def plot(key: str, mesh: TriMesh) -> bytes:
        if key not in plots:
            plots[key] = png_bytes(render_surface_overlay(mesh, [], []))
        return plots[key]

    # (role, triplet) -> (object key, mesh, description)
    def roles(t: OutlineTriplet):
        a = anchors[t.anchor_desc]
        yield "anchor", a.id, a.mesh, t.anchor_desc, (t.above and not t.target_first)
        yield "target", object_id, obj, t.target_desc, (t.above and t.target_first)

    directions: dict[tuple, Direction] = {}
    with _stage("direction"):
        for t in triplets:
            a = anchors[t.anchor_desc]
            for role, key, mesh, desc, forced_up in roles(t):
                dkey = (role, key, desc, forced_up)
                if dkey in directions:
                    continue
                if forced_up:
                    directions[dkey] = Direction.UP
                else:
                    directions[dkey] = extract_direction([scene_ctx(a), plot(key, mesh)], desc, client, role=role,
                                                         instruction=instruction, relation=t.relation,
                                                         transcript=transcript)

    chosen_surfaces: dict[tuple, InteractionSurface] = {}
    with _stage("surface"):
        for t in triplets:
            a = anchors[t.anchor_desc]
            for role, key, mesh, desc, forced_up in roles(t):
                d = directions[(role, key, desc, forced_up)]
                skey = (role, key, desc, d)
                if skey in chosen_surfaces:
                    continue
                cands = extract_surfaces(mesh, d, config.extraction)
                chosen_surfaces[skey] = choose_surface(mesh, cands, desc, client, role=role, instruction=instruction,
                                                       relation=t.relation, context=[scene_ctx(a), plot(key, mesh)],
                                                       m=config.batch_size, seed=seed, transcript=transcript)

    def surface_of(t: OutlineTriplet, role: str) -> InteractionSurface:
        for r, key, _, desc, forced_up in roles(t):
            if r == role:
                return chosen_surfaces[(r, key, desc, directions[(r, key, desc, forced_up)])]
        raise KeyError(role)

    dists: dict[int, float] = {}
    with _stage("params"):
        for i, t in enumerate(triplets):
            if not t.kind.has_distance:
                continue
            a = anchors[t.anchor_desc]
            imgs = [scene_ctx(a),
                    png_bytes(render_surface_overlay(obj, [surface_of(t, "target")], ["red"])),
                    png_bytes(render_surface_overlay(a.mesh, [surface_of(t, "anchor")], ["red"]))]
            dists[i] = estimate_params(t, client, images=imgs, instruction=instruction, transcript=transcript)

    grounded = []
    for i, t in enumerate(triplets):
        a = anchors[t.anchor_desc]
        grounded.append(ConstraintInstance(t.kind, surface_of(t, "anchor").posed(a.pose), surface_of(t, "target"),
                                           dists.get(i), t.target_first))

    with _stage("solve"):
        solver_cfg = replace(config.solver, seed=seed)
        cands = solve(grounded, scene, obj, solver_cfg)

    with _stage("prune"):
        if cands.feasible:
            top = cands.top(config.max_candidates)
            chosen = plausibility_prune(top, scene, obj, instruction, client, m=config.prune_batch_size,
                                        seed=seed, object_id=object_id, transcript=transcript)
        else:
            chosen = cands.fallback[0]
    energy = EnergyModel(grounded).energy(chosen)

    result = PlacementResult(chosen, energy, cands.feasible, cands, outline, grounded, transcript,
                             {d: o.id for d, o in anchors.items()}, {}, instruction, seed)
    if out_dir is not None:
        write_result(result, scene, obj, object_id, out_dir, scene_dir)
    return result


def write_result(result: PlacementResult, scene: Scene, obj: TriMesh, object_id: str, out_dir,
                 scene_dir=None) -> None:
    """Write result.json, transcript.jsonl, the final render and the edited scene manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    final = placement_render(scene, obj, result.chosen, object_id)
    (out / "final.png").write_bytes(png_bytes(final))
    result.renders = {"final": "final.png"}
    write_obj(obj, out / f"{object_id}.obj")
    objs = []
    for o in scene.objects:
        path = o.mesh_path
        if path is not None and scene_dir is not None and not os.path.isabs(path):
            path = os.path.relpath(Path(scene_dir) / path, out)
        objs.append(SceneObject(o.id, o.mesh, o.pose, o.caption, path))
    objs.append(placed_object(object_id, obj, result.chosen, mesh_path=f"{object_id}.obj"))
    save_scene(Scene(tuple(objs), scene.camera), out / "scene.json")
    result.transcript.write(out / "transcript.jsonl")
    (out / "result.json").write_text(result.dumps())
