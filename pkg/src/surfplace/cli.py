"""Command line entry point: ``surfplace <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .client import CachedClient, HttpClient, ScriptedClient
from .constraints import load_constraints
from .pipeline import PipelineConfig, PipelineError, place
from .raster import palette, render, render_object_masks, render_surface_overlay, save_png
from .scene import load_obj, load_scene
from .solver import SolverConfig, solve, write_candidates
from .surfaces import Direction, ExtractionConfig, extract_surfaces

logger = logging.getLogger("surfplace")


def _write_json(data, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _client(args):
    inner = ScriptedClient.load(args.script) if args.script else None
    if args.replay:
        return CachedClient(args.replay, "replay")
    if inner is None:
        inner = HttpClient(model=args.model)
    if args.record:
        return CachedClient(args.record, "record", inner)
    return inner


def _solver_config(args) -> SolverConfig:
    cfg = SolverConfig(seed=args.seed)
    if args.restarts is not None:
        cfg = replace(cfg, restarts=args.restarts)
    return cfg


def cmd_place(args) -> int:
    scene = load_scene(args.scene)
    obj = load_obj(args.object)
    cfg = PipelineConfig(seed=args.seed, batch_size=args.batch_size, solver=_solver_config(args),
                         extraction=ExtractionConfig(bbox_only=args.bbox_only))
    out = Path(args.out)
    result = place(scene, obj, args.prompt, cfg, _client(args), out_dir=args.artifacts,
                   scene_dir=Path(args.scene).parent)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(result.dumps())
    t = result.chosen
    print(f"placed at {list(t.translation)} yaw {t.yaw:.4f} energy {result.energy:.4g}"
          + ("" if result.feasible else " (no feasible candidate, best effort)"))
    return 0


def cmd_solve(args) -> int:
    scene = load_scene(args.scene)
    obj = load_obj(args.object)
    cands = solve(load_constraints(args.constraints), scene, obj, _solver_config(args))
    write_candidates(cands, args.out)
    print(f"{len(cands)} feasible candidates")
    return 0


def cmd_extract(args) -> int:
    mesh = load_obj(args.mesh)
    cfg = ExtractionConfig(cos_threshold=args.cos, eps_frac=args.eps_frac, bbox_only=args.bbox_only)
    surfs = extract_surfaces(mesh, Direction.parse(args.direction), cfg)
    _write_json({"direction": args.direction, "surfaces": [s.to_json() for s in surfs]}, args.out)
    if args.viz:
        save_png(render_surface_overlay(mesh, surfs, palette(len(surfs))), args.viz)
    print(f"{len(surfs)} surfaces")
    return 0


def cmd_render(args) -> int:
    scene = load_scene(args.scene)
    if args.mask_ids:
        ids = args.mask_ids.split(",")
        colors = args.colors.split(",") if args.colors else None
        if colors is None:
            colors = palette(len(ids))
        save_png(render_object_masks(scene, ids, colors), args.out)
    else:
        render(scene).save(args.out)
    return 0


def cmd_eval(args) -> int:
    from .evaluation import evaluate_suite, load_suite

    tasks = load_suite(args.suite)
    cfg = PipelineConfig(solver=_solver_config(args))

    def client_for(task):
        if args.live:
            return CachedClient(task.root / "cache", "record", HttpClient(model=args.model))
        script = task.root / "script.json"
        if script.exists():
            return CachedClient(task.root / "cache", "record", ScriptedClient.load(script))
        return CachedClient(task.root / "cache", "replay")

    def grader_for(task):
        if args.no_grader:
            return None
        script = task.root / "script.json"
        if args.live:
            return CachedClient(task.root / "grader_cache", "record", HttpClient(model=args.model))
        if script.exists():
            return CachedClient(task.root / "grader_cache", "record", ScriptedClient.load(script))
        return None

    report = evaluate_suite(tasks, cfg, client_for, grader_for, args.tries, args.artifacts)
    _write_json(report.to_json(), args.out)
    print(f"min L2 {report.min_l2_cm:.2f} cm  mean L2 {report.mean_l2_cm:.2f} cm  "
          f"visibility {report.visibility:.3f}  energy {report.energy:.3f}  plausibility {report.plausibility}")
    return 0


def cmd_gen_fixtures(args) -> int:
    from .fixtures import generate_fixtures

    tasks = generate_fixtures(args.out, seed=args.seed, record=not args.no_record, tries=args.tries)
    for t in tasks:
        print(t.name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="surfplace", description="Language-guided object placement in 3D scenes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def solver_args(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--restarts", type=int, default=None)

    sp = sub.add_parser("place", help="place one object from an instruction")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--object", required=True)
    sp.add_argument("--prompt", required=True)
    mode = sp.add_mutually_exclusive_group()
    mode.add_argument("--replay", metavar="DIR", help="answer only from a recorded cache")
    mode.add_argument("--record", metavar="DIR", help="read through and store replies in DIR")
    sp.add_argument("--script", help="scripted judge JSON instead of a live endpoint")
    sp.add_argument("--model", default="default")
    sp.add_argument("--batch-size", type=int, default=3)
    sp.add_argument("--bbox-only", action="store_true", help="use bounding-box faces as the only surfaces")
    sp.add_argument("--artifacts", help="directory for renders, transcript and edited scene")
    sp.add_argument("--out", required=True)
    solver_args(sp)
    sp.set_defaults(func=cmd_place)

    sp = sub.add_parser("solve", help="solve a grounded constraint file")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--object", required=True)
    sp.add_argument("--constraints", required=True)
    sp.add_argument("--out", required=True)
    solver_args(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("extract-surfaces", help="list interaction surfaces of a mesh")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--dir", "--direction", dest="direction", required=True, choices=[d.value for d in Direction])
    sp.add_argument("--eps-frac", type=float, default=ExtractionConfig.eps_frac)
    sp.add_argument("--cos", type=float, default=ExtractionConfig.cos_threshold)
    sp.add_argument("--bbox-only", action="store_true")
    sp.add_argument("--viz", help="PNG of the object with the surfaces overlaid")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("render", help="render a scene, optionally with colored object masks")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--mask-ids", help="comma separated object ids")
    sp.add_argument("--colors", help="comma separated palette names")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("eval", help="evaluate a task suite")
    sp.add_argument("--suite", required=True)
    sp.add_argument("--tries", type=int, default=None)
    sp.add_argument("--live", action="store_true", help="query the live endpoint on cache misses")
    sp.add_argument("--model", default="default")
    sp.add_argument("--no-grader", action="store_true")
    sp.add_argument("--artifacts")
    sp.add_argument("--out", required=True)
    solver_args(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gen-fixtures", help="write the synthetic fixture suite")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tries", type=int, default=4)
    sp.add_argument("--no-record", action="store_true", help="skip recording the seed-0 judge caches")
    sp.set_defaults(func=cmd_gen_fixtures)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PipelineError, ValueError, LookupError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
