"""Simulated annealing over yaw + translation placements."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from .constraints import LOW_ENERGY, ConstraintInstance, EnergyModel
from .scene import PlacementTransform, Scene, TriMesh, normalize_angle, yaw_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    restarts: int = 20
    iters_per_restart: int = 2000
    initial_temperature: float = 1.0
    cooling_rate: float = 0.997
    translation_step: float = 0.25
    yaw_step: float = 0.3
    feasibility_threshold: float = 0.01
    seed: int = 0
    dedup_radius: float = 0.05
    # greedy zero-temperature refinement of each chain's best state
    polish_iters: int = 400
    bbox_margin: float = 0.1

    def __post_init__(self) -> None:
        for name in ("restarts", "iters_per_restart", "initial_temperature", "cooling_rate",
                     "translation_step", "yaw_step", "feasibility_threshold", "dedup_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.cooling_rate < 1.0:
            raise ValueError("cooling_rate must be < 1")
        if self.polish_iters < 0 or self.bbox_margin < 0:
            raise ValueError("polish_iters and bbox_margin must be non-negative")


@dataclass
class CandidateSet:
    """Feasible placements sorted by energy, plus the best infeasible fallback."""

    candidates: list = field(default_factory=list)   # [(PlacementTransform, energy)]
    chain_energies: list = field(default_factory=list)
    fallback: Optional[tuple] = None                 # (PlacementTransform, energy) when nothing is feasible
    threshold: float = 0.01

    @property
    def feasible(self) -> bool:
        return bool(self.candidates)

    def __len__(self) -> int:
        return len(self.candidates)

    def transforms(self) -> list[PlacementTransform]:
        return [t for t, _ in self.candidates]

    def top(self, n: int) -> "CandidateSet":
        return CandidateSet(self.candidates[:n], self.chain_energies, self.fallback, self.threshold)

    def to_json(self) -> dict:
        out = {
            "threshold": self.threshold,
            "candidates": [{"transform": t.to_json(), "energy": e} for t, e in self.candidates],
            "chain_energies": list(self.chain_energies),
        }
        if self.fallback is not None:
            out["fallback"] = {"transform": self.fallback[0].to_json(), "energy": self.fallback[1]}
        return out

    @classmethod
    def from_json(cls, data: dict) -> "CandidateSet":
        cands = [(PlacementTransform.from_json(c["transform"]), float(c["energy"])) for c in data["candidates"]]
        fb = data.get("fallback")
        fallback = (PlacementTransform.from_json(fb["transform"]), float(fb["energy"])) if fb else None
        return cls(cands, list(data.get("chain_energies", [])), fallback, float(data.get("threshold", 0.01)))


_YAW, _AXIS, _ALL, _REDRAW = range(4)
MOVE_MIX = (0.2, 0.4, 0.3, 0.1)


def search_bounds(scene: Scene, margin: float) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = scene.bbox()
    pad = 0.5 * margin * (hi - lo)
    return lo - pad, hi + pad


def _run_chain(model: EnergyModel, lo: np.ndarray, hi: np.ndarray, config: SolverConfig,
               rng: np.random.Generator) -> tuple[np.ndarray, float, float]:
    n = config.iters_per_restart
    pos = rng.uniform(lo, hi)
    yaw = rng.uniform(-math.pi, math.pi)
    e = model.energy_rt(yaw_matrix(yaw), pos)
    best = (pos.copy(), yaw, e)

    # Draw everything up front. Move mix: yaw, one axis, all axes, or a
    # uniform redraw of one axis inside the bounds. The redraw keeps the
    # other coordinates, so a chain sitting on a flat plateau (e.g. the
    # contact plane away from the support) can still cross it late.
    steps = rng.standard_normal((n, 3))
    kind = rng.choice(4, size=n, p=MOVE_MIX)
    axis = rng.integers(0, 3, n)
    redraw = rng.uniform(lo[axis], hi[axis])
    yaw_steps = rng.standard_normal(n)
    accept_u = rng.random(n)
    temp = config.initial_temperature
    for i in range(n):
        k = kind[i]
        if k == _YAW:
            new_pos, new_yaw = pos, normalize_angle(yaw + config.yaw_step * yaw_steps[i])
        else:
            new_pos, new_yaw = pos.copy(), yaw
            if k == _REDRAW:
                new_pos[axis[i]] = redraw[i]
            else:
                sigma = config.translation_step * math.sqrt(temp / config.initial_temperature)
                if k == _AXIS:
                    new_pos[axis[i]] += sigma * steps[i, 0]
                else:
                    new_pos += sigma * steps[i]
                np.clip(new_pos, lo, hi, out=new_pos)
        new_e = model.energy_rt(yaw_matrix(new_yaw), new_pos)
        if new_e <= e or accept_u[i] < math.exp(-(new_e - e) / temp):
            pos, yaw, e = new_pos, new_yaw, new_e
            if e < best[2]:
                best = (pos.copy(), yaw, e)
        temp *= config.cooling_rate

    pos, yaw, e = best
    sigma = config.translation_step * math.sqrt(temp / config.initial_temperature)
    for i in range(config.polish_iters):
        scale = 0.5 ** (i % 8)
        if i % 4 == 3:
            new_pos, new_yaw = pos, normalize_angle(yaw + 0.05 * config.yaw_step * scale * rng.standard_normal())
        else:
            new_pos, new_yaw = np.clip(pos + sigma * scale * rng.standard_normal(3), lo, hi), yaw
        new_e = model.energy_rt(yaw_matrix(new_yaw), new_pos)
        if new_e < e:
            pos, yaw, e = new_pos, new_yaw, new_e
    return pos, yaw, e


def solve(constraints: Sequence[ConstraintInstance], scene: Scene, obj: TriMesh,
          config: Optional[SolverConfig] = None) -> CandidateSet:
    """Anneal ``config.restarts`` independent chains and collect feasible placements.

    Chain ``i`` uses seed ``config.seed + i``. Chains are deduplicated in
    chain order (a later chain within ``dedup_radius`` of a kept one is
    dropped), so adding restarts never removes candidates.
    """
    config = config or SolverConfig()
    if not constraints:
        raise ValueError("solve needs at least one constraint")
    if len(obj) == 0:
        raise ValueError("object mesh is empty")
    model = EnergyModel(constraints)
    lo, hi = search_bounds(scene, config.bbox_margin)

    results = []
    for chain in range(config.restarts):
        rng = np.random.default_rng(config.seed + chain)
        pos, yaw, e = _run_chain(model, lo, hi, config, rng)
        results.append((PlacementTransform(tuple(pos), yaw), e, chain))

    kept = []
    for t, e, chain in results:
        if e > config.feasibility_threshold:
            continue
        p = np.asarray(t.translation)
        if all(np.linalg.norm(p - np.asarray(k[0].translation)) >= config.dedup_radius for k in kept):
            kept.append((t, e, chain))

    verified = []
    for t, _, chain in kept:
        # re-evaluate from the stored (rounded-yaw) transform
        e = model.energy(t)
        if e <= config.feasibility_threshold:
            verified.append((e, chain, t))
        else:
            logger.warning("chain %d failed re-verification (energy %.4g)", chain, e)
    verified.sort(key=lambda r: (r[0], r[1]))

    out = CandidateSet([(t, e) for e, _, t in verified], [e for _, e, _ in results],
                       threshold=config.feasibility_threshold)
    if not out.candidates:
        t, e, _ = min(results, key=lambda r: (r[1], r[2]))
        out.fallback = (t, model.energy(t))
        logger.warning("no feasible placement; best energy %.4g", e)
    return out


def energy_score(constraints: Sequence[ConstraintInstance], groundtruth: PlacementTransform) -> float:
    """Fraction of individual constraints with energy below 0.01 at ``groundtruth``."""
    if not constraints:
        raise ValueError("energy_score needs at least one constraint")
    energies = EnergyModel(constraints).energies(groundtruth)
    return sum(e < LOW_ENERGY for e in energies) / len(energies)


def config_to_json(config: SolverConfig) -> dict:
    return asdict(config)


def write_candidates(cands: CandidateSet, path) -> None:
    with open(path, "w") as fh:
        json.dump(cands.to_json(), fh, indent=2)
        fh.write("\n")
