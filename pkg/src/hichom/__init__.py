"""Periodic homogenization of a weakly coupled electrostatic / high-contrast elastic system.

Unit-cell correctors, effective tensors, the homogenized macro problem, and
fine-scale reference solves on structured Q1 meshes.
"""
from .cells import CorrectorSet, ElectrostrictionTensor, PhaseCoefficients, solve_all
from .config import RunConfig, parse_config
from .dns import DnsProblem, DnsSolution, run_dns
from .effective import CHomMode, Domain, EffectiveTensors, assemble_effective_tensors
from .fem import FeField, SolverConfig
from .geometry import (Phase, StructuredMesh, UnitCellGeometry, build_macro_mesh,
                       build_periodic_map, build_unit_cell_mesh)
from .macro import MacroProblem, MacroSolution, solve_macro
from .tensors import IsotropicElasticTensor
from .verification import ConvergenceReport, StudySetup, run_convergence_study

__version__ = "0.1.0"

__all__ = [
    "CHomMode", "ConvergenceReport", "CorrectorSet", "DnsProblem", "DnsSolution", "Domain",
    "EffectiveTensors", "ElectrostrictionTensor", "FeField", "IsotropicElasticTensor",
    "MacroProblem", "MacroSolution", "Phase", "PhaseCoefficients", "RunConfig", "SolverConfig",
    "StructuredMesh", "StudySetup", "UnitCellGeometry", "assemble_effective_tensors",
    "build_macro_mesh", "build_periodic_map", "build_unit_cell_mesh", "parse_config",
    "run_convergence_study", "run_dns", "solve_all", "solve_macro",
]
