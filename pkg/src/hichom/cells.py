"""Periodic cell problems on the unit cell.

Four corrector families are solved on one mesh:

* ``chi[i]``   scalar correctors of the dielectric coefficient ``a``;
* ``V[ij]``    elastic correctors of ``B`` under the unit strains ``sym(e_i x e_j)``;
* ``p[ij]``    electrostriction correctors, driven by ``C : sym(G_ij)`` with
  ``G_ij = (e_i + grad chi_i) x (e_j + grad chi_j)``;
* ``W[ij]``    rigid-matrix correctors of ``R``, solved on the inclusion with
  the matrix held fixed.

Index pairs follow ``tensors.PAIRS`` = (11, 22, 12); ``V[ij]`` and ``V[ji]``
share storage.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import fem, tensors
from .errors import EmptyInclusion, MissingChi
from .fem import FeField, SolverConfig
from .geometry import PeriodicDofMap, Phase, StructuredMesh, UnitCellGeometry
from .tensors import PAIRS, IsotropicElasticTensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ElectrostrictionTensor:
    """``C_ijkh = alpha d_ij d_kh + beta (d_ik d_jh + d_ih d_jk)``."""

    alpha: float
    beta: float

    def voigt(self) -> np.ndarray:
        return IsotropicElasticTensor(self.alpha, self.beta).voigt()


@dataclass(frozen=True, eq=False)
class PhaseCoefficients:
    a: Mapping[Phase, np.ndarray]
    B: Mapping[Phase, IsotropicElasticTensor]
    R: IsotropicElasticTensor
    C: Mapping[Phase, ElectrostrictionTensor]
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a", {Phase(p): fem.as_spd(v) for p, v in self.a.items()})
        for tensor in self.B.values():
            tensor.validate()
        self.R.validate()
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        for phase in Phase:
            if phase not in self.a or phase not in self.B or phase not in self.C:
                raise ValueError(f"coefficients missing for phase {phase.name}")

    @classmethod
    def isotropic(cls, a_matrix=1.0, a_inclusion=10.0,
                  B_matrix=(1.0, 1.0), B_inclusion=(10.0, 10.0), R=(1.0, 1.0),
                  C_matrix=(0.0, 0.0), C_inclusion=(0.0, 0.0), gamma=1.0) -> "PhaseCoefficients":
        return cls(
            a={Phase.MATRIX: a_matrix, Phase.INCLUSION: a_inclusion},
            B={Phase.MATRIX: IsotropicElasticTensor(*B_matrix),
               Phase.INCLUSION: IsotropicElasticTensor(*B_inclusion)},
            R=IsotropicElasticTensor(*R),
            C={Phase.MATRIX: ElectrostrictionTensor(*C_matrix),
               Phase.INCLUSION: ElectrostrictionTensor(*C_inclusion)},
            gamma=gamma)

    def scaled_B(self, factor: float) -> "PhaseCoefficients":
        return PhaseCoefficients(self.a, {p: t.scaled(factor) for p, t in self.B.items()},
                                 self.R, self.C, self.gamma)

    # per-element coefficient arrays
    def a_elements(self, mesh: StructuredMesh) -> np.ndarray:
        return fem.per_element(mesh, self.a, (2, 2))

    def B_elements(self, mesh: StructuredMesh) -> np.ndarray:
        return fem.per_element(mesh, {p: t.voigt() for p, t in self.B.items()}, (3, 3))

    def C_elements(self, mesh: StructuredMesh) -> np.ndarray:
        return fem.per_element(mesh, {p: t.voigt() for p, t in self.C.items()}, (3, 3))

    def R_elements(self, mesh: StructuredMesh, full_cell: bool = False) -> np.ndarray:
        phases = Phase if full_cell else (Phase.INCLUSION,)
        return fem.per_element(mesh, {p: self.R.voigt() for p in phases}, (3, 3))

    def to_dict(self) -> dict:
        return {
            "a": {p.name.lower(): self.a[p].tolist() for p in Phase},
            "B": {p.name.lower(): {"lambda": self.B[p].lam, "mu": self.B[p].mu} for p in Phase},
            "R": {"lambda": self.R.lam, "mu": self.R.mu},
            "C": {p.name.lower(): {"alpha": self.C[p].alpha, "beta": self.C[p].beta}
                  for p in Phase},
            "gamma": self.gamma,
        }


@dataclass(frozen=True, eq=False)
class CorrectorSet:
    mesh: StructuredMesh
    pmap: PeriodicDofMap
    chi: tuple[FeField, ...] | None = None
    V: tuple[FeField, ...] | None = None
    p: tuple[FeField, ...] | None = None
    W: tuple[FeField, ...] | None = None
    geometry: UnitCellGeometry | None = field(default=None, compare=False)

    def get(self, family: str, i: int, j: int) -> FeField:
        fields = getattr(self, family)
        if fields is None:
            raise MissingChi(f"corrector family {family!r} has not been solved")
        return fields[tensors.pair_index(i, j)]


def _periodic_solve(op, rhs, mesh, pmap, ncomp, cfg, extra=()):
    system = fem.apply_constraints(op, rhs, [fem.Periodic(pmap), *extra], mesh=mesh, ncomp=ncomp)
    x = fem.factorize(system.op, cfg)(system.rhs)
    return system.expand(x)


def _constant_per_quad(mesh: StructuredMesh, per_element: np.ndarray, order: int) -> np.ndarray:
    nq = order * order
    return np.repeat(per_element[:, None, ...], nq, axis=1)


def solve_chi(mesh: StructuredMesh, pmap: PeriodicDofMap, coeffs: PhaseCoefficients,
              cfg: SolverConfig = SolverConfig()) -> tuple[FeField, ...]:
    q = cfg.quadrature_order
    a_e = coeffs.a_elements(mesh)
    op = fem.scalar_operator_from_elements(mesh, a_e, q)
    rhs = np.column_stack([
        -fem.flux_load(mesh, _constant_per_quad(mesh, a_e[:, :, i], q), q) for i in range(2)])
    u = _periodic_solve(op, rhs, mesh, pmap, 1, cfg)
    return tuple(FeField(mesh, u[:, i]) for i in range(2))


def solve_V(mesh: StructuredMesh, pmap: PeriodicDofMap, coeffs: PhaseCoefficients,
            cfg: SolverConfig = SolverConfig()) -> tuple[FeField, ...]:
    q = cfg.quadrature_order
    b_e = coeffs.B_elements(mesh)
    op = fem.elasticity_operator_from_elements(mesh, b_e, q)
    rhs = np.column_stack([
        fem.stress_load(mesh, _constant_per_quad(mesh, tensors.apply(b_e, tensors.sym_unit(i, j)), q), q)
        for (i, j) in PAIRS])
    u = _periodic_solve(op, rhs, mesh, pmap, 2, cfg)
    return tuple(FeField.from_flat(mesh, u[:, k], 2) for k in range(3))


def corrected_gradients(chi: tuple[FeField, ...], order: int) -> np.ndarray:
    """``e_i + grad chi_i`` at quadrature points, shape ``(2, ne, nq, 2)``."""
    out = []
    for i, c in enumerate(chi):
        g = fem.gradients_at_quadrature(c, order)[:, :, 0, :].copy()
        g[..., i] += 1.0
        out.append(g)
    return np.stack(out)


def electrostriction_source(mesh: StructuredMesh, chi: tuple[FeField, ...],
                            coeffs: PhaseCoefficients, order: int) -> np.ndarray:
    """``C : sym(G_ij)`` at quadrature points for each pair, shape ``(3, ne, nq, 3)``."""
    grads = corrected_gradients(chi, order)
    c_e = coeffs.C_elements(mesh)
    out = []
    for (i, j) in PAIRS:
        gi, gj = grads[i], grads[j]
        dyad = np.stack([gi[..., 0] * gj[..., 0], gi[..., 1] * gj[..., 1],
                         0.5 * (gi[..., 0] * gj[..., 1] + gi[..., 1] * gj[..., 0])], axis=-1)
        out.append(np.einsum("epr,enr->enp", c_e, dyad * tensors.ENGINEERING))
    return np.stack(out)


def solve_p(mesh: StructuredMesh, pmap: PeriodicDofMap, coeffs: PhaseCoefficients,
            chi: tuple[FeField, ...] | None, cfg: SolverConfig = SolverConfig()) -> tuple[FeField, ...]:
    if chi is None or len(chi) != 2:
        raise MissingChi("solve_p needs the scalar correctors chi")
    if chi[0].mesh.n != mesh.n:
        raise MissingChi("chi was solved on a different mesh")
    q = cfg.quadrature_order
    op = fem.elasticity_operator_from_elements(mesh, coeffs.B_elements(mesh), q)
    source = electrostriction_source(mesh, chi, coeffs, q)
    rhs = np.column_stack([-fem.stress_load(mesh, source[k], q) for k in range(3)])
    u = _periodic_solve(op, rhs, mesh, pmap, 2, cfg)
    return tuple(FeField.from_flat(mesh, u[:, k], 2) for k in range(3))


def solve_W(mesh: StructuredMesh, pmap: PeriodicDofMap, coeffs: PhaseCoefficients,
            cfg: SolverConfig = SolverConfig(), strict_rigidity: bool = True) -> tuple[FeField, ...]:
    """Rigid-matrix correctors.

    The matrix is held at zero: with ``strict_rigidity`` every node touching a
    matrix element is frozen, so the symmetric gradient vanishes on each matrix
    element; otherwise only nodes touching nothing but matrix are frozen.
    """
    inclusion = mesh.element_phase == Phase.INCLUSION
    if not inclusion.any():
        raise EmptyInclusion("rigid-matrix correctors need a nonempty inclusion")
    q = cfg.quadrature_order
    r_e = coeffs.R_elements(mesh)
    op = fem.elasticity_operator_from_elements(mesh, r_e, q)
    rhs = np.column_stack([
        fem.stress_load(mesh, _constant_per_quad(mesh, tensors.apply(r_e, tensors.sym_unit(i, j)), q), q)
        for (i, j) in PAIRS])
    extra = ()
    if (~inclusion).any():
        extra = (fem.PhaseFrozen(Phase.MATRIX, 0.0, exclusive=not strict_rigidity),)
    u = _periodic_solve(op, rhs, mesh, pmap, 2, cfg, extra)
    return tuple(FeField.from_flat(mesh, u[:, k], 2) for k in range(3))


def solve_all(mesh: StructuredMesh, pmap: PeriodicDofMap, coeffs: PhaseCoefficients,
              cfg: SolverConfig = SolverConfig(), threads: int = 1,
              geometry: UnitCellGeometry | None = None) -> CorrectorSet:
    """Solve every corrector family; the three families after ``chi`` run concurrently."""
    chi = solve_chi(mesh, pmap, coeffs, cfg)
    has_inclusion = bool((mesh.element_phase == Phase.INCLUSION).any())
    jobs = {"V": lambda: solve_V(mesh, pmap, coeffs, cfg),
            "p": lambda: solve_p(mesh, pmap, coeffs, chi, cfg)}
    if has_inclusion:
        jobs["W"] = lambda: solve_W(mesh, pmap, coeffs, cfg)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {k: pool.submit(fn) for k, fn in jobs.items()}
            results = {k: f.result() for k, f in futures.items()}
    else:
        results = {k: fn() for k, fn in jobs.items()}
    return CorrectorSet(mesh, pmap, chi, results["V"], results["p"], results.get("W"), geometry)
