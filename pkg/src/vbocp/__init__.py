"""Reduced-order pipelines for boundary optimal control problems whose
control region moves with a geometric parameter."""

from .mesh import (
    Mesh,
    MeshError,
    control_indicator,
    generate_holed_square_mesh,
    generate_test1_mesh,
    load_mesh,
    save_mesh,
)
from .ocp import HfSolution, HighFidelityModel, ParameterPoint, SolverError, solve_hf
from .rom import (
    PodBasis,
    ReducedModel,
    SnapshotSet,
    build_aggregated,
    collect_snapshots,
    pod,
    project_and_solve,
    relative_errors,
)

__all__ = [
    "Mesh",
    "MeshError",
    "control_indicator",
    "generate_holed_square_mesh",
    "generate_test1_mesh",
    "load_mesh",
    "save_mesh",
    "HfSolution",
    "HighFidelityModel",
    "ParameterPoint",
    "SolverError",
    "solve_hf",
    "PodBasis",
    "ReducedModel",
    "SnapshotSet",
    "build_aggregated",
    "collect_snapshots",
    "pod",
    "project_and_solve",
    "relative_errors",
]

__version__ = "0.1.0"
