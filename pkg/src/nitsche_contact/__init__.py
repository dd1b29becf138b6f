"""Adaptive FEM for frictionless two-body contact with Nitsche mortaring."""

from .adapt import (
    ConvergenceRecord,
    ExperimentSetup,
    StudyConfig,
    initial_meshes,
    make_experiment,
    make_problem,
    mark_dorfler,
    regression_slope,
    run_study,
)
from .contact import (
    ContactProblem,
    InterfaceCoefficients,
    NitscheConfig,
    NonconvergenceError,
    SolveResult,
    SolverError,
    contact_force,
    energy_norm,
    interface_coefficients,
    reconstruct_lambda,
    solve,
)
from .estimator import EstimatorReport, report
from .fem import FeSpace, FieldFunction, MaterialParams, strain, stress, traction_split
from .mesh import (
    BoundaryRule,
    BoundarySpec,
    ClassificationError,
    GeometryError,
    InterfaceSegment,
    Mesh,
    bisect_refine,
    build_interface,
    classify_boundary,
    generate_block_mesh,
    uniform_refine,
)
from .oracle import MixedSystem, check_vi_residual, solve_mixed

__all__ = [
    "BoundaryRule",
    "BoundarySpec",
    "ClassificationError",
    "ContactProblem",
    "ConvergenceRecord",
    "EstimatorReport",
    "ExperimentSetup",
    "FeSpace",
    "FieldFunction",
    "GeometryError",
    "InterfaceCoefficients",
    "InterfaceSegment",
    "MaterialParams",
    "Mesh",
    "MixedSystem",
    "NitscheConfig",
    "NonconvergenceError",
    "SolveResult",
    "SolverError",
    "StudyConfig",
    "bisect_refine",
    "build_interface",
    "check_vi_residual",
    "classify_boundary",
    "contact_force",
    "energy_norm",
    "generate_block_mesh",
    "initial_meshes",
    "interface_coefficients",
    "make_experiment",
    "make_problem",
    "mark_dorfler",
    "reconstruct_lambda",
    "regression_slope",
    "report",
    "run_study",
    "solve",
    "solve_mixed",
    "strain",
    "stress",
    "traction_split",
    "uniform_refine",
]
