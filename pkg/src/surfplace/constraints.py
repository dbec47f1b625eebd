"""Binary constraint energies over pairs of interaction surfaces.

Every energy is >= 0 and vanishes when the relation holds. Distances are
meters throughout.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from . import _kernels
from .geometry import DegenerateGeometryError, map_unit_square_to_polygon
from .scene import PlacementTransform
from .surfaces import InteractionSurface

DISTANCE_SCALE = 0.1
PLANE_TOL = 1e-6
OVERHANG_SAMPLES = 1000
OVERHANG_SEED = 42
LOW_ENERGY = 0.01


class ConstraintKind(str, enum.Enum):
    PARALLEL = "Parallel"
    CLOSE_TO = "CloseTo"
    FAR_FROM = "FarFrom"
    IN_FRONT_PLANE = "InFrontPlane"
    CONTACT = "Contact"
    NO_OVERHANG = "NoOverhang"

    @property
    def has_distance(self) -> bool:
        return self in (ConstraintKind.CLOSE_TO, ConstraintKind.FAR_FROM)

    @classmethod
    def parse(cls, name: str) -> "ConstraintKind":
        key = str(name).replace("_", "").replace(" ", "").lower()
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise ValueError(f"unknown constraint kind {name!r}")


# --------------------------------------------------------------------------
# array-level kernels (shared by the public functions and the solver)
# --------------------------------------------------------------------------

def _parallel(n1: np.ndarray, n2: np.ndarray) -> float:
    c = float(n1 @ n2)
    return min(abs(1.0 - c), abs(-1.0 - c))


def _in_front(poly1: np.ndarray, n1: np.ndarray, poly2: np.ndarray) -> float:
    e = _kernels.in_front(poly1, n1, poly2, PLANE_TOL)
    if e < 0.0:
        raise DegenerateGeometryError("all vertex pairs coincide")
    return e


def _contact(poly1, n1, poly2, n2) -> float:
    if float(n1 @ n2) >= 0.0:
        return _in_front(poly1, n1, poly2) + _in_front(poly2, n2, poly1)
    # opposing normals: each surface must lie in the other's plane from both sides
    return 0.5 * (_in_front(poly1, n1, poly2) + _in_front(poly1, -n1, poly2)
                  + _in_front(poly2, n2, poly1) + _in_front(poly2, -n2, poly1))


def _no_overhang(samples1: np.ndarray, poly2: np.ndarray, n2: np.ndarray) -> float:
    return _kernels.outside_fraction(samples1, poly2, n2, 1e-9)


@lru_cache(maxsize=4)
def _unit_samples(count: int, seed: int) -> np.ndarray:
    pts = qmc.Halton(d=2, scramble=True, seed=seed).random(count)
    pts.setflags(write=False)
    return pts


def overhang_samples(surface: InteractionSurface, count: int = OVERHANG_SAMPLES,
                     seed: int = OVERHANG_SEED) -> np.ndarray:
    """Fixed, evenly spread sample points inside ``surface``'s polygon.

    Projection onto another plane is affine, so projecting these samples is
    the same as sampling the projected polygon uniformly.
    """
    return map_unit_square_to_polygon(_unit_samples(count, seed), surface.polygon)


# --------------------------------------------------------------------------
# public constraint functions
# --------------------------------------------------------------------------

def surface_distance(p1: InteractionSurface, p2: InteractionSurface) -> float:
    """Exact minimum distance between the two filled polygons."""
    return _kernels.polygon_distance(p1.polygon, p1.normal, p2.polygon, p2.normal)


def parallel(p1: InteractionSurface, p2: InteractionSurface) -> float:
    return _parallel(p1.normal, p2.normal)


def close_to(p1: InteractionSurface, p2: InteractionSurface, dist: float) -> float:
    """Zero while the surfaces are at most ``dist`` apart."""
    _check_dist(dist)
    return DISTANCE_SCALE * max(surface_distance(p1, p2) - dist, 0.0)


def far_from(p1: InteractionSurface, p2: InteractionSurface, dist: float) -> float:
    """Zero while the surfaces are at least ``dist`` apart."""
    _check_dist(dist)
    return DISTANCE_SCALE * max(dist - surface_distance(p1, p2), 0.0)


def in_front_plane(p1: InteractionSurface, p2: InteractionSurface) -> float:
    """Largest normalised back-projection of ``p2`` vertices behind ``p1``'s plane.

    Vertex pairs whose offset along ``p1.normal`` is within ``PLANE_TOL``
    of the plane count as satisfied.
    """
    return _in_front(p1.polygon, p1.normal, p2.polygon)


def contact(p1: InteractionSurface, p2: InteractionSurface) -> float:
    return _contact(p1.polygon, p1.normal, p2.polygon, p2.normal)


def no_overhang(p1: InteractionSurface, p2: InteractionSurface,
                samples: Optional[np.ndarray] = None) -> float:
    """Fraction of ``p1``'s projection onto ``p2``'s plane that falls outside ``p2``."""
    if samples is None:
        samples = overhang_samples(p1)
    return _no_overhang(samples, p2.polygon, p2.normal)


def _check_dist(dist: float) -> None:
    if not dist > 0:
        raise ValueError("distance parameter must be positive")


# --------------------------------------------------------------------------
# grounded constraints
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConstraintInstance:
    """A constraint bound to an anchor surface (world frame) and a target
    surface (canonical frame of the object being placed).

    ``target_first`` records the argument order: when true the function is
    evaluated as ``f(target, anchor)``.
    """

    kind: ConstraintKind
    anchor: InteractionSurface
    target: InteractionSurface
    dist: Optional[float] = None
    target_first: bool = False

    def __post_init__(self) -> None:
        kind = ConstraintKind.parse(self.kind) if not isinstance(self.kind, ConstraintKind) else self.kind
        object.__setattr__(self, "kind", kind)
        if kind.has_distance:
            if self.dist is None or not self.dist > 0:
                raise ValueError(f"{kind.value} needs a positive distance")
            object.__setattr__(self, "dist", float(self.dist))
        elif self.dist is not None:
            raise ValueError(f"{kind.value} takes no distance parameter")

    def evaluate(self, t: PlacementTransform) -> float:
        return EnergyModel([self]).energies(t)[0]

    def to_json(self) -> dict:
        out = {"kind": self.kind.value, "anchor": self.anchor.to_json(), "target": self.target.to_json()}
        if self.dist is not None:
            out["dist_m"] = self.dist
        if self.target_first:
            out["target_first"] = True
        return out

    @classmethod
    def from_json(cls, data: dict) -> "ConstraintInstance":
        return cls(ConstraintKind.parse(data["kind"]), InteractionSurface.from_json(data["anchor"]),
                   InteractionSurface.from_json(data["target"]), data.get("dist_m"),
                   bool(data.get("target_first", False)))


def constraints_to_json(constraints: Sequence[ConstraintInstance]) -> dict:
    return {"constraints": [c.to_json() for c in constraints]}


def constraints_from_json(data: dict) -> list[ConstraintInstance]:
    return [ConstraintInstance.from_json(c) for c in data["constraints"]]


def load_constraints(path) -> list[ConstraintInstance]:
    with open(path) as fh:
        return constraints_from_json(json.load(fh))


class EnergyModel:
    """Constraint set precompiled for repeated evaluation under placements."""

    def __init__(self, constraints: Iterable[ConstraintInstance]):
        self.constraints = list(constraints)
        self._terms = []
        for c in self.constraints:
            samples = None
            if c.kind is ConstraintKind.NO_OVERHANG:
                samples = overhang_samples(c.target if c.target_first else c.anchor)
            self._terms.append((c, samples))

    def energies(self, t: PlacementTransform) -> list[float]:
        return self.energies_rt(t.rotation, np.asarray(t.translation, float))

    def energies_rt(self, rot: np.ndarray, trans: np.ndarray) -> list[float]:
        out = []
        for c, samples in self._terms:
            a_poly, a_n = c.anchor.polygon, c.anchor.normal
            t_poly = c.target.polygon @ rot.T + trans
            t_n = rot @ c.target.normal
            if c.target_first:
                p1, n1, p2, n2 = t_poly, t_n, a_poly, a_n
            else:
                p1, n1, p2, n2 = a_poly, a_n, t_poly, t_n
            kind = c.kind
            if kind is ConstraintKind.PARALLEL:
                e = _parallel(n1, n2)
            elif kind is ConstraintKind.CONTACT:
                e = _contact(p1, n1, p2, n2)
            elif kind is ConstraintKind.IN_FRONT_PLANE:
                e = _in_front(p1, n1, p2)
            elif kind is ConstraintKind.NO_OVERHANG:
                s1 = samples @ rot.T + trans if c.target_first else samples
                e = _no_overhang(s1, p2, n2)
            else:
                d = _kernels.polygon_distance(p1, n1, p2, n2)
                gap = d - c.dist if kind is ConstraintKind.CLOSE_TO else c.dist - d
                e = DISTANCE_SCALE * max(gap, 0.0)
            out.append(e)
        return out

    def energy(self, t: PlacementTransform) -> float:
        return float(sum(self.energies(t)))

    def energy_rt(self, rot: np.ndarray, trans: np.ndarray) -> float:
        return float(sum(self.energies_rt(rot, trans)))


def total_energy(constraints: Sequence[ConstraintInstance], t: PlacementTransform) -> float:
    if not constraints:
        return 0.0
    return EnergyModel(constraints).energy(t)
