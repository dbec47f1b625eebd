"""Placement metrics over task suites."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .client import ModelClient
from .pipeline import PipelineConfig, place, placement_render, plausibility_score
from .raster import is_visible, png_bytes, render, visible_fraction
from .scene import PlacementTransform, Scene, TriMesh, load_obj, load_scene, placed_object
from .solver import energy_score

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlacementTask:
    name: str
    scene_path: Path
    object_path: Path
    instruction: str
    groundtruth: PlacementTransform
    tries: int = 4

    def __post_init__(self) -> None:
        if self.tries < 1:
            raise ValueError("tries must be >= 1")

    @property
    def root(self) -> Path:
        return Path(self.scene_path).parent

    def to_json(self) -> dict:
        return {"name": self.name, "scene": Path(self.scene_path).name, "object": Path(self.object_path).name,
                "instruction": self.instruction, "groundtruth": self.groundtruth.to_json(), "tries": self.tries}


def load_task(task_dir) -> PlacementTask:
    root = Path(task_dir)
    data = json.loads((root / "task.json").read_text())
    return PlacementTask(data["name"], root / data["scene"], root / data["object"], data["instruction"],
                         PlacementTransform.from_json(data["groundtruth"]), int(data.get("tries", 4)))


def load_suite(suite_dir) -> list[PlacementTask]:
    root = Path(suite_dir)
    index = root / "suite.json"
    if index.exists():
        names = json.loads(index.read_text())["tasks"]
    else:
        names = sorted(p.parent.name for p in root.glob("*/task.json"))
    return [load_task(root / n) for n in names]


def min_mean_l2(predictions: Sequence[PlacementTransform], groundtruth: PlacementTransform) -> tuple[float, float]:
    """Translation-only L2 error in centimeters: (closest try, mean over tries)."""
    if not predictions:
        raise ValueError("no predictions")
    gt = np.asarray(groundtruth.translation)
    d = [100.0 * float(np.linalg.norm(np.asarray(p.translation) - gt)) for p in predictions]
    return min(d), float(np.mean(d))


@dataclass
class MetricReport:
    min_l2_cm: float
    mean_l2_cm: float
    visibility: float
    energy: float
    plausibility: Optional[float] = None
    tasks: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"min_l2_cm": self.min_l2_cm, "mean_l2_cm": self.mean_l2_cm, "visibility": self.visibility,
                "plausibility": self.plausibility, "energy": self.energy, "tasks": self.tasks}


@dataclass
class TryOutcome:
    seed: int
    translation: Optional[list]
    l2_cm: float
    visible: bool
    energy: float
    plausibility: Optional[int]
    error: Optional[str] = None


def _scene_center(scene: Scene) -> np.ndarray:
    lo, hi = scene.bbox()
    return (lo + hi) / 2.0


def run_try(task: PlacementTask, scene: Scene, obj: TriMesh, seed: int, config: PipelineConfig,
            client: ModelClient, grader: Optional[ModelClient], out_dir=None) -> TryOutcome:
    gt = np.asarray(task.groundtruth.translation)
    try:
        cfg = PipelineConfig(seed, config.batch_size, config.prune_batch_size, config.max_candidates,
                             config.solver, config.extraction, config.object_id)
        result = place(scene, obj, task.instruction, cfg, client, out_dir=out_dir, scene_dir=task.root)
    except Exception as exc:  # a failed try is scored, not raised
        logger.warning("%s seed %d failed: %s", task.name, seed, exc)
        miss = 100.0 * float(np.linalg.norm(_scene_center(scene) - gt))
        return TryOutcome(seed, None, miss, False, 0.0, 1 if grader is not None else None, str(exc))
    t = result.chosen
    oid = config.object_id
    while oid in scene.ids:
        oid += "_"
    placed = scene.with_object(placed_object(oid, obj, t))
    full = render(placed)
    visible = is_visible(visible_fraction(placed, oid, full))
    grade = None
    if grader is not None:
        img = png_bytes(placement_render(scene, obj, t, oid))
        grade = plausibility_score(img, task.instruction, grader, translation=t.translation)
    l2 = 100.0 * float(np.linalg.norm(np.asarray(t.translation) - gt))
    return TryOutcome(seed, list(t.translation), l2, visible, energy_score(result.grounded, task.groundtruth), grade)


def aggregate(per_task: Sequence[dict]) -> MetricReport:
    """Average per-task metrics; tasks are ordered by name so the result is order independent."""
    if not per_task:
        raise ValueError("empty suite")
    rows = sorted(per_task, key=lambda r: r["name"])
    grades = [r["plausibility"] for r in rows if r["plausibility"] is not None]
    return MetricReport(
        float(np.mean([r["min_l2_cm"] for r in rows])),
        float(np.mean([r["mean_l2_cm"] for r in rows])),
        float(np.mean([r["visibility"] for r in rows])),
        float(np.mean([r["energy"] for r in rows])),
        float(np.mean(grades)) if len(grades) == len(rows) else None,
        list(rows),
    )


def evaluate_suite(tasks: Sequence[PlacementTask], config: Optional[PipelineConfig] = None,
                   client_for: Optional[Callable[[PlacementTask], ModelClient]] = None,
                   grader_for: Optional[Callable[[PlacementTask], Optional[ModelClient]]] = None,
                   tries: Optional[int] = None, out_dir=None) -> MetricReport:
    """Run every task ``tries`` times (seeds 0..tries-1) and aggregate the metrics.

    Failed tries score visibility 0, energy 0 and an L2 equal to the
    groundtruth's distance from the scene center.
    """
    if not tasks:
        raise ValueError("empty suite")
    if client_for is None:
        raise ValueError("a client factory is required")
    config = config or PipelineConfig()
    rows = []
    for task in tasks:
        scene = load_scene(task.scene_path)
        obj = load_obj(task.object_path)
        client = client_for(task)
        grader = grader_for(task) if grader_for is not None else None
        n = tries or task.tries
        outcomes = []
        for seed in range(n):
            sub = None if out_dir is None else Path(out_dir) / task.name / f"seed{seed}"
            outcomes.append(run_try(task, scene, obj, seed, config, client, grader, sub))
        l2 = [o.l2_cm for o in outcomes]
        grades = [o.plausibility for o in outcomes]
        rows.append({
            "name": task.name,
            "min_l2_cm": min(l2),
            "mean_l2_cm": float(np.mean(l2)),
            "visibility": float(np.mean([o.visible for o in outcomes])),
            "energy": float(np.mean([o.energy for o in outcomes])),
            "plausibility": float(np.mean(grades)) if None not in grades else None,
            "tries": [o.__dict__ for o in outcomes],
        })
    return aggregate(rows)
