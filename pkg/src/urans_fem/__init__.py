"""Taylor-Hood finite element solver for the 1/2-equation URANS model."""
from .config import ConfigError, RunConfig, StudyConfig, load_config, load_study
from .mesh import Mesh, WallDistanceField, build_structured_square, compute_wall_distance, parse_gmsh
from .model import KState, ModelParams
from .solver import State, StepReport, TimeStepper, run_transient, solve_saddle, step

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "KState",
    "Mesh",
    "ModelParams",
    "RunConfig",
    "State",
    "StepReport",
    "StudyConfig",
    "TimeStepper",
    "WallDistanceField",
    "build_structured_square",
    "compute_wall_distance",
    "load_config",
    "load_study",
    "parse_gmsh",
    "run_transient",
    "solve_saddle",
    "step",
]
