"""Direct numerical simulation of the fine-scale coupled system on the unit square.

The fine mesh resolves every period cell with ``m x m`` elements, so for
``eps = 1/k`` it has ``k m`` elements per side and each element maps onto a
unit-cell element by its integer index modulo ``m``. Inclusion elements carry
``B + eps**(-2 gamma) R``; the auxiliary displacement ``v_eps`` uses ``B``
alone with the same load, and ``w_eps = (u_eps - v_eps) / eps**gamma``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import fem, tensors
from .cells import PhaseCoefficients
from .errors import IllConditioned, LadderMismatch, ResolutionTooCoarse, SingularSystem
from .fem import FeField, SolverConfig
from .geometry import Phase, StructuredMesh, UnitCellGeometry, build_macro_mesh
from .macro import Scalar, Vector, zero_scalar, zero_vector

logger = logging.getLogger(__name__)

MIN_CELLS_PER_PERIOD = 4


def periods_per_side(epsilon: float) -> int:
    """Integer ``k`` with ``epsilon = 1/k``; raises ``LadderMismatch`` otherwise."""
    if not epsilon > 0:
        raise LadderMismatch(f"epsilon must be positive, got {epsilon}")
    k = round(1.0 / epsilon)
    if k < 1 or abs(k * epsilon - 1.0) > 1e-12:
        raise LadderMismatch(f"epsilon = {epsilon} does not tile the unit square")
    return k


@dataclass(frozen=True, eq=False)
class DnsProblem:
    epsilon: float
    cells_per_period: int
    coeffs: PhaseCoefficients
    geometry: UnitCellGeometry
    f: Scalar = zero_scalar
    g: Vector = zero_vector
    h: Scalar = zero_scalar
    inclusion_multiplier: float | None = None  # default eps**(-2 gamma)

    def __post_init__(self):
        periods_per_side(self.epsilon)
        if self.cells_per_period < MIN_CELLS_PER_PERIOD:
            raise ResolutionTooCoarse(
                f"need at least {MIN_CELLS_PER_PERIOD} elements per period, got {self.cells_per_period}")

    @property
    def periods(self) -> int:
        return periods_per_side(self.epsilon)

    @property
    def multiplier(self) -> float:
        if self.inclusion_multiplier is not None:
            return float(self.inclusion_multiplier)
        return float(self.epsilon ** (-2.0 * self.coeffs.gamma))


@dataclass(frozen=True, eq=False)
class DnsSolution:
    problem: DnsProblem
    mesh: StructuredMesh
    phi: FeField
    u: FeField
    v: FeField
    w: FeField

    def norms(self, order: int = 2) -> dict[str, float]:
        eps_gamma = self.problem.epsilon ** self.problem.coeffs.gamma
        return {
            "phi_h1": fem.h1_norm(self.phi, order),
            "u_h1": fem.h1_norm(self.u, order),
            "v_h1": fem.h1_norm(self.v, order),
            "scaled_w_h1": fem.h1_norm(self.w.scale(eps_gamma), order),
        }


def sample_oscillatory_phase(problem: DnsProblem) -> np.ndarray:
    m = problem.cells_per_period
    n = problem.periods * m
    iy, ix = np.divmod(np.arange(n * n), n)
    y = np.column_stack([(ix % m + 0.5) / m, (iy % m + 0.5) / m])
    inside = problem.geometry.contains(y)
    return np.where(inside, Phase.INCLUSION, Phase.MATRIX).astype(np.int8)


def fine_mesh(problem: DnsProblem) -> StructuredMesh:
    mesh = build_macro_mesh(1.0, problem.periods * problem.cells_per_period)
    return mesh.with_phases(sample_oscillatory_phase(problem))


def _dirichlet_h(mesh: StructuredMesh, h: Scalar) -> fem.Dirichlet:
    xb = mesh.node_coordinates[mesh.boundary_nodes]
    return fem.Dirichlet(mesh.boundary_nodes, np.asarray(h(xb[:, 0], xb[:, 1]), float)[:, None])


def solve_phi_eps(problem: DnsProblem, cfg: SolverConfig = SolverConfig(),
                  mesh: StructuredMesh | None = None) -> FeField:
    mesh = mesh or fine_mesh(problem)
    q = cfg.quadrature_order
    op = fem.scalar_operator_from_elements(mesh, problem.coeffs.a_elements(mesh), q)
    qp = fem.quadrature_points(mesh, q)
    f = np.broadcast_to(np.asarray(problem.f(qp[..., 0], qp[..., 1]), float), qp.shape[:2])
    system = fem.apply_constraints(op, fem.source_load(mesh, f, q), _dirichlet_h(mesh, problem.h),
                                   mesh=mesh)
    return FeField(mesh, fem.solve_reduced(system, cfg))


def fine_load(problem: DnsProblem, phi: FeField, order: int = 2) -> np.ndarray:
    """``int g . xi - int (C : grad(phi) x grad(phi)) : D(xi)``."""
    mesh = phi.mesh
    qp = fem.quadrature_points(mesh, order)
    g = np.stack([np.broadcast_to(np.asarray(c, float), qp.shape[:2])
                  for c in problem.g(qp[..., 0], qp[..., 1])], axis=-1)
    grad = fem.gradients_at_quadrature(phi, order)[:, :, 0, :]
    dyad = np.stack([grad[..., 0] ** 2, grad[..., 1] ** 2, grad[..., 0] * grad[..., 1]], axis=-1)
    stress = np.einsum("epr,enr->enp", problem.coeffs.C_elements(mesh), dyad * tensors.ENGINEERING)
    return fem.source_load(mesh, g, order) - fem.stress_load(mesh, stress, order)


def high_contrast_elements(problem: DnsProblem, mesh: StructuredMesh) -> np.ndarray:
    d_e = problem.coeffs.B_elements(mesh)
    return d_e + problem.multiplier * problem.coeffs.R_elements(mesh)


def _solve_displacement(mesh, d_e, load, cfg):
    q = cfg.quadrature_order
    op = fem.elasticity_operator_from_elements(mesh, d_e, q)
    system = fem.apply_constraints(op, load, fem.Dirichlet(mesh.boundary_nodes, 0.0),
                                   mesh=mesh, ncomp=2)
    return FeField.from_flat(mesh, fem.solve_reduced(system, cfg), 2)


def solve_u_eps(problem: DnsProblem, phi: FeField, cfg: SolverConfig = SolverConfig(),
                load: np.ndarray | None = None) -> FeField:
    mesh = phi.mesh
    load = fine_load(problem, phi, cfg.quadrature_order) if load is None else load
    try:
        return _solve_displacement(mesh, high_contrast_elements(problem, mesh), load, cfg)
    except SingularSystem as exc:
        raise IllConditioned(
            f"factorization failed at inclusion multiplier {problem.multiplier:.3e}: {exc}") from exc


def solve_v_eps(problem: DnsProblem, phi: FeField, cfg: SolverConfig = SolverConfig(),
                load: np.ndarray | None = None) -> FeField:
    mesh = phi.mesh
    load = fine_load(problem, phi, cfg.quadrature_order) if load is None else load
    return _solve_displacement(mesh, problem.coeffs.B_elements(mesh), load, cfg)


def split_w_eps(u: FeField, v: FeField, gamma: float, epsilon: float) -> FeField:
    return (u - v).scale(epsilon ** (-gamma))


def run_dns(problem: DnsProblem, cfg: SolverConfig = SolverConfig()) -> DnsSolution:
    mesh = fine_mesh(problem)
    phi = solve_phi_eps(problem, cfg, mesh)
    load = fine_load(problem, phi, cfg.quadrature_order)
    u = solve_u_eps(problem, phi, cfg, load)
    v = solve_v_eps(problem, phi, cfg, load)
    w = split_w_eps(u, v, problem.coeffs.gamma, problem.epsilon)
    logger.info("dns eps=%g: %d elements, multiplier %.3g", problem.epsilon,
                mesh.num_elements, problem.multiplier)
    return DnsSolution(problem, mesh, phi, u, v, w)


def inclusion_strain_fraction(u: FeField, order: int = 2) -> float:
    """``int_{inclusions} |D(u)|^2 / int |D(u)|^2``."""
    e = fem.strains_at_quadrature(u, order)
    sq = tensors.ddot(e, e)
    total = fem.integrate(u.mesh, sq, order)
    incl = fem.integrate(u.mesh, sq * (u.mesh.element_phase == Phase.INCLUSION)[:, None], order)
    return float(incl / total) if total > 0 else 0.0
