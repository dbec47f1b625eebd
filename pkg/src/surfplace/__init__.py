"""Language-guided object placement on extracted interaction surfaces."""

from .constraints import ConstraintInstance, ConstraintKind, EnergyModel
from .pipeline import PipelineConfig, PlacementResult, place
from .scene import PlacementTransform, Scene, SceneObject, TriMesh, load_obj, load_scene
from .selection import select
from .solver import CandidateSet, SolverConfig, solve
from .surfaces import Direction, InteractionSurface, extract_surfaces

__version__ = "0.1.0"
