"""Epsilon-ladder convergence study: fine-scale solves against the homogenized limit.

The macro reference is solved once on the finest fine-scale mesh, so every
coarser fine mesh is nested in it and errors are measured by evaluating the
macro fields at the fine quadrature points. The unit cell is resolved with
``m`` elements per side by default, matching the per-period resolution of the
fine meshes so both paths see the same discrete microstructure.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import cells, dns, effective, fem, macro
from .cells import CorrectorSet, PhaseCoefficients
from .effective import CHomMode, Domain, EffectiveTensors
from .errors import LadderMismatch, MeshMismatch
from .fem import FeField, SolverConfig
from .geometry import UnitCellGeometry, build_macro_mesh, build_periodic_map, build_unit_cell_mesh

logger = logging.getLogger(__name__)

ERROR_QUADRATURE = 3


@dataclass(frozen=True, eq=False)
class StudySetup:
    coeffs: PhaseCoefficients
    geometry: UnitCellGeometry
    epsilons: tuple[float, ...] = (0.5, 0.25, 0.125)
    cells_per_period: int = 8
    cell_resolution: int | None = None  # defaults to cells_per_period
    f: macro.Scalar = macro.zero_scalar
    g: macro.Vector = macro.zero_vector
    h: macro.Scalar = macro.zero_scalar
    solver: SolverConfig = SolverConfig()
    c_hom_mode: CHomMode = CHomMode.WEAK_FORM
    domain: Domain = Domain.INCLUSION
    threads: int = 1

    def __post_init__(self):
        if not self.epsilons:
            raise LadderMismatch("the epsilon ladder is empty")
        for eps in self.epsilons:
            dns.periods_per_side(eps)


@dataclass(frozen=True)
class ConvergenceReport:
    epsilons: list[float]
    phi_l2_errors: list[float]
    u_l2_errors: list[float]
    corrector_h1_residuals: list[float]
    uncorrected_gradient_errors: list[float]
    u_h1_distances: list[float]
    splitting_residuals: list[float]
    norms: list[dict[str, float]]
    tensor_cross_checks: dict[str, float]
    effective_tensors: dict[str, list]
    config_echo: dict = field(default_factory=dict)

    def rows(self) -> list[dict[str, float]]:
        """One flat record per epsilon, in ladder order."""
        out = []
        for k, eps in enumerate(self.epsilons):
            row = {"epsilon": eps, "phi_l2_error": self.phi_l2_errors[k],
                   "u_l2_error": self.u_l2_errors[k],
                   "corrector_h1_residual": self.corrector_h1_residuals[k],
                   "uncorrected_gradient_error": self.uncorrected_gradient_errors[k],
                   "u_h1_distance": self.u_h1_distances[k],
                   "splitting_residual": self.splitting_residuals[k]}
            row.update(self.norms[k])
            out.append(row)
        return out

    def to_dict(self) -> dict:
        return {
            "epsilons": self.epsilons,
            "phi_l2_errors": self.phi_l2_errors,
            "u_l2_errors": self.u_l2_errors,
            "corrector_h1_residuals": self.corrector_h1_residuals,
            "uncorrected_gradient_errors": self.uncorrected_gradient_errors,
            "u_h1_distances": self.u_h1_distances,
            "splitting_residuals": self.splitting_residuals,
            "norms": self.norms,
            "tensor_cross_checks": self.tensor_cross_checks,
            "effective_tensors": self.effective_tensors,
            "config": self.config_echo,
        }


def _fine_points(mesh, order):
    return fem.quadrature_points(mesh, order).reshape(-1, 2)


def _l2_distance(fine: FeField, reference: FeField, order: int = ERROR_QUADRATURE) -> float:
    """``||fine - reference||_L2`` with ``reference`` evaluated at the fine quadrature points."""
    ne, nq = fine.mesh.num_elements, order * order
    diff = (fem.values_at_quadrature(fine, order)
            - fem.evaluate(reference, _fine_points(fine.mesh, order)).reshape(ne, nq, -1))
    return float(math.sqrt(fem.integrate(fine.mesh, np.sum(diff * diff, axis=-1), order)))


def _gradient_distance(fine: FeField, reference: FeField, order: int = ERROR_QUADRATURE) -> float:
    ne, nq = fine.mesh.num_elements, order * order
    diff = (fem.gradients_at_quadrature(fine, order)
            - fem.evaluate_gradient(reference, _fine_points(fine.mesh, order)).reshape(
                ne, nq, fine.ncomp, 2))
    return float(math.sqrt(fem.integrate(fine.mesh, np.sum(diff * diff, axis=(-1, -2)), order)))


def _check_domain(fine: FeField, reference: FeField) -> None:
    if fine.mesh.edge_length != reference.mesh.edge_length or fine.mesh.origin != reference.mesh.origin:
        raise MeshMismatch("fine and macro fields live on different domains")


def corrector_residual(phi_eps: FeField, phi0: FeField, chi: tuple[FeField, ...],
                       epsilon: float, order: int = ERROR_QUADRATURE) -> float:
    """``||grad phi_eps - (grad phi0 + d_i phi0 grad_y chi_i(x/eps))||_L2``."""
    _check_domain(phi_eps, phi0)
    if not chi or not chi[0].mesh.is_unit_cell:
        raise MeshMismatch("cell correctors must live on the unit cell")
    mesh = phi_eps.mesh
    ne, nq = mesh.num_elements, order * order
    x = _fine_points(mesh, order)
    y = np.mod(x / epsilon, 1.0)
    grad0 = fem.evaluate_gradient(phi0, x)[:, 0, :]
    approx = grad0.copy()
    for i, c in enumerate(chi):
        approx += grad0[:, i:i + 1] * fem.evaluate_gradient(c, y)[:, 0, :]
    diff = fem.gradients_at_quadrature(phi_eps, order)[:, :, 0, :] - approx.reshape(ne, nq, 2)
    return float(math.sqrt(fem.integrate(mesh, np.sum(diff * diff, axis=-1), order)))


def tensor_cross_check(correctors: CorrectorSet, coeffs: PhaseCoefficients,
                       order: int = 2) -> dict[str, float]:
    """Energy-form vs averaging-form gaps plus the diagnostic mode/domain gaps."""
    t = effective.assemble_effective_tensors(correctors, coeffs, order=order, check=False)
    keys = ("a_hom_energy_vs_averaging", "B_hom_energy_vs_averaging",
            "C_hom_weak_form_vs_stress_product", "R_hom_full_cell_vs_inclusion",
            "T_hom_full_cell_vs_inclusion")
    return {k: t.checks[k] for k in keys}


def splitting_residual(run: dns.DnsSolution) -> float:
    """``max |u - (v + eps^gamma w)| / max |u|`` over all nodal components."""
    eps_gamma = run.problem.epsilon ** run.problem.coeffs.gamma
    gap = np.abs(run.u.values - (run.v.values + eps_gamma * run.w.values)).max()
    scale = np.abs(run.u.values).max()
    return float(gap / scale) if scale > 0 else float(gap)


def homogenize(setup: StudySetup) -> tuple[CorrectorSet, EffectiveTensors]:
    n = setup.cell_resolution or setup.cells_per_period
    mesh = build_unit_cell_mesh(setup.geometry, n)
    pmap = build_periodic_map(mesh)
    correctors = cells.solve_all(mesh, pmap, setup.coeffs, setup.solver, setup.threads, setup.geometry)
    t = effective.assemble_effective_tensors(correctors, setup.coeffs, setup.c_hom_mode,
                                             setup.domain, setup.solver.quadrature_order)
    return correctors, t


def _run_one(setup: StudySetup, eps: float) -> dns.DnsSolution:
    problem = dns.DnsProblem(eps, setup.cells_per_period, setup.coeffs, setup.geometry,
                             setup.f, setup.g, setup.h)
    return dns.run_dns(problem, setup.solver)


def run_dns_ladder(setup: StudySetup) -> list[dns.DnsSolution]:
    if setup.threads > 1 and len(setup.epsilons) > 1:
        with ThreadPoolExecutor(max_workers=setup.threads) as pool:
            return list(pool.map(lambda e: _run_one(setup, e), setup.epsilons))
    return [_run_one(setup, e) for e in setup.epsilons]


def run_convergence_study(setup: StudySetup, config_echo: dict | None = None) -> ConvergenceReport:
    correctors, t = homogenize(setup)
    finest = max(dns.periods_per_side(e) for e in setup.epsilons) * setup.cells_per_period
    macro_problem = macro.MacroProblem(build_macro_mesh(1.0, finest), t, setup.f, setup.g, setup.h)
    ref = macro.solve_macro(macro_problem, setup.solver)
    runs = run_dns_ladder(setup)

    phi_err, u_err, resid, plain, u_h1, split, norms = [], [], [], [], [], [], []
    for eps, run in zip(setup.epsilons, runs):
        phi_err.append(_l2_distance(run.phi, ref.phi0))
        u_err.append(_l2_distance(run.u, ref.u0))
        resid.append(corrector_residual(run.phi, ref.phi0, correctors.chi, eps))
        plain.append(_gradient_distance(run.phi, ref.phi0))
        u_h1.append(math.hypot(u_err[-1], _gradient_distance(run.u, ref.u0)))
        split.append(splitting_residual(run))
        norms.append(run.norms(ERROR_QUADRATURE))
        logger.info("eps=%g phi err %.3e u err %.3e", eps, phi_err[-1], u_err[-1])

    checks = {k: t.checks[k] for k in (
        "a_hom_energy_vs_averaging", "B_hom_energy_vs_averaging",
        "C_hom_weak_form_vs_stress_product", "R_hom_full_cell_vs_inclusion",
        "T_hom_full_cell_vs_inclusion")}
    tensors_out = {"a_hom": t.a_hom.tolist(), "B_hom": t.B_hom.tolist(), "C_hom": t.C_hom.tolist(),
                   "R_hom": t.R_hom.tolist(), "T_hom": t.T_hom.tolist()}
    return ConvergenceReport([float(e) for e in setup.epsilons], phi_err, u_err, resid, plain, u_h1,
                             split, norms, checks, tensors_out, dict(config_echo or {}))


def l2_error(f: FeField, exact: Callable, order: int = ERROR_QUADRATURE) -> float:
    """``||f - exact||_L2`` with the exact function sampled at quadrature points."""
    qp = fem.quadrature_points(f.mesh, order)
    vals = exact(qp[..., 0], qp[..., 1])
    ref = np.stack([np.broadcast_to(np.asarray(v, float), qp.shape[:2]) for v in vals], -1) \
        if isinstance(vals, tuple) else np.asarray(vals, float)[..., None]
    diff = fem.values_at_quadrature(f, order) - ref
    return float(math.sqrt(fem.integrate(f.mesh, np.sum(diff * diff, axis=-1), order)))
