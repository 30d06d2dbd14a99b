"""Homogenized macro problem on a square domain.

Three ordered solves: the potential ``phi0`` with nodal Dirichlet data ``h``,
the displacement ``v0`` driven by ``g`` and the effective electrostriction
stress, and the high-contrast remainder ``w0`` driven by ``T_hom : D(v0)``.
Both displacements vanish on the boundary; ``u0 = v0 + w0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fem, tensors
from .effective import EffectiveTensors
from .errors import DegenerateRHom, MeshMismatch
from .fem import FeField, SolverConfig
from .geometry import StructuredMesh

Scalar = Callable[[np.ndarray, np.ndarray], np.ndarray]
Vector = Callable[[np.ndarray, np.ndarray], tuple]

R_HOM_EIG_FLOOR = 1e-10


def contract(tensor: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``(T : M)_mn = T_ijmn M_ij`` for stored-form ``M`` along the last axis."""
    return (m * tensors.ENGINEERING) @ tensor


def zero_scalar(x1, x2):
    return np.zeros_like(x1)


def zero_vector(x1, x2):
    return np.zeros_like(x1), np.zeros_like(x1)


@dataclass(frozen=True, eq=False)
class MacroProblem:
    mesh: StructuredMesh
    tensors: EffectiveTensors
    f: Scalar = zero_scalar
    g: Vector = zero_vector
    h: Scalar = zero_scalar


@dataclass(frozen=True, eq=False)
class MacroSolution:
    phi0: FeField
    v0: FeField
    w0: FeField
    u0: FeField


def _at_quadrature_scalar(mesh, func, order):
    qp = fem.quadrature_points(mesh, order)
    return np.broadcast_to(np.asarray(func(qp[..., 0], qp[..., 1]), dtype=float), qp.shape[:2])


def _at_quadrature_vector(mesh, func, order):
    qp = fem.quadrature_points(mesh, order)
    comps = func(qp[..., 0], qp[..., 1])
    return np.stack([np.broadcast_to(np.asarray(c, dtype=float), qp.shape[:2]) for c in comps], -1)


def _constant_operator(mesh, matrix, order, ncomp):
    per = np.broadcast_to(matrix, (mesh.num_elements,) + matrix.shape)
    if ncomp == 1:
        return fem.scalar_operator_from_elements(mesh, per, order)
    return fem.elasticity_operator_from_elements(mesh, per, order)


def solve_phi0(problem: MacroProblem, cfg: SolverConfig = SolverConfig()) -> FeField:
    mesh, q = problem.mesh, cfg.quadrature_order
    a_hom = np.asarray(problem.tensors.a_hom, dtype=float)
    fem.as_spd(0.5 * (a_hom + a_hom.T))
    op = _constant_operator(mesh, a_hom, q, 1)
    rhs = fem.source_load(mesh, _at_quadrature_scalar(mesh, problem.f, q), q)
    xb = mesh.node_coordinates[mesh.boundary_nodes]
    bc = fem.Dirichlet(mesh.boundary_nodes, np.asarray(problem.h(xb[:, 0], xb[:, 1]), float)[:, None])
    system = fem.apply_constraints(op, rhs, bc, mesh=mesh)
    return FeField(mesh, fem.solve_reduced(system, cfg))


def electrostriction_load(problem: MacroProblem, phi0: FeField, order: int = 2) -> np.ndarray:
    """``int (C_hom : grad(phi0) x grad(phi0)) : D(xi)`` as a load vector."""
    g = fem.gradients_at_quadrature(phi0, order)[:, :, 0, :]
    dyad = np.stack([g[..., 0] ** 2, g[..., 1] ** 2, g[..., 0] * g[..., 1]], axis=-1)
    return fem.stress_load(problem.mesh, contract(problem.tensors.C_hom, dyad), order)


def _zero_dirichlet(mesh):
    return fem.Dirichlet(mesh.boundary_nodes, 0.0)


def solve_v0(problem: MacroProblem, phi0: FeField, cfg: SolverConfig = SolverConfig()) -> FeField:
    mesh, q = problem.mesh, cfg.quadrature_order
    op = _constant_operator(mesh, np.asarray(problem.tensors.B_hom).T, q, 2)
    rhs = fem.source_load(mesh, _at_quadrature_vector(mesh, problem.g, q), q)
    rhs = rhs - electrostriction_load(problem, phi0, q)
    system = fem.apply_constraints(op, rhs, _zero_dirichlet(mesh), mesh=mesh, ncomp=2)
    return FeField.from_flat(mesh, fem.solve_reduced(system, cfg), 2)


def check_r_hom(r_hom: np.ndarray) -> float:
    eig = tensors.min_eigenvalue(r_hom)
    if not eig > R_HOM_EIG_FLOOR:
        raise DegenerateRHom(f"R_hom is not positive definite (smallest eigenvalue {eig:.3e})")
    return eig


def remainder_load(problem: MacroProblem, v0: FeField, order: int = 2) -> np.ndarray:
    """``-int (T_hom : D(v0)) : D(xi)``."""
    strain = fem.strains_at_quadrature(v0, order)
    return -fem.stress_load(problem.mesh, contract(problem.tensors.T_hom, strain), order)


def solve_w0(problem: MacroProblem, v0: FeField, cfg: SolverConfig = SolverConfig()) -> FeField:
    mesh, q = problem.mesh, cfg.quadrature_order
    r_hom = np.asarray(problem.tensors.R_hom)
    check_r_hom(r_hom)
    op = _constant_operator(mesh, r_hom.T, q, 2)
    system = fem.apply_constraints(op, remainder_load(problem, v0, q), _zero_dirichlet(mesh),
                                   mesh=mesh, ncomp=2)
    return FeField.from_flat(mesh, fem.solve_reduced(system, cfg), 2)


def compose_u0(v0: FeField, w0: FeField) -> FeField:
    if v0.mesh.n != w0.mesh.n or v0.mesh.edge_length != w0.mesh.edge_length:
        raise MeshMismatch("v0 and w0 live on different meshes")
    return v0 + w0


def solve_macro(problem: MacroProblem, cfg: SolverConfig = SolverConfig()) -> MacroSolution:
    phi0 = solve_phi0(problem, cfg)
    v0 = solve_v0(problem, phi0, cfg)
    w0 = solve_w0(problem, v0, cfg)
    return MacroSolution(phi0, v0, w0, compose_u0(v0, w0))
