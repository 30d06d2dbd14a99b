"""Effective tensors assembled from cell correctors.

Rank-4 tensors are returned in the stored 3x3 form of :mod:`hichom.tensors`
(rows index the loading pair ``ij``, columns the response pair ``mn``).

``a_hom`` and ``B_hom`` are computed twice, once in energy form (corrected
field against corrected field) and once in averaging form (corrected flux or
stress against the unit load); the two agree at a Galerkin solution and the
gap is recorded in ``EffectiveTensors.checks``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from . import cells, fem, tensors
from .cells import CorrectorSet, PhaseCoefficients
from .errors import BoundsViolation, MissingCorrectors
from .geometry import Phase, StructuredMesh
from .tensors import PAIRS

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-8


class CHomMode(str, enum.Enum):
    WEAK_FORM = "weak_form"            # effective stress tested against corrected strains
    STRESS_PRODUCT = "stress_product"  # product of the two stress-like brackets


class Domain(str, enum.Enum):
    INCLUSION = "inclusion"
    FULL_CELL = "full_cell"


@dataclass(frozen=True, eq=False)
class EffectiveTensors:
    a_hom: np.ndarray
    B_hom: np.ndarray
    C_hom_all: dict[CHomMode, np.ndarray]
    R_hom_all: dict[Domain, np.ndarray]
    T_hom_all: dict[Domain, np.ndarray]
    c_hom_mode: CHomMode = CHomMode.WEAK_FORM
    domain: Domain = Domain.INCLUSION
    checks: dict[str, float] = field(default_factory=dict)
    bounds: dict[str, dict] = field(default_factory=dict)

    @property
    def C_hom(self) -> np.ndarray:
        return self.C_hom_all[self.c_hom_mode]

    @property
    def R_hom(self) -> np.ndarray:
        return self.R_hom_all[self.domain]

    @property
    def T_hom(self) -> np.ndarray:
        return self.T_hom_all[self.domain]

    def rank4(self, name: str) -> np.ndarray:
        return tensors.to_rank4(getattr(self, name))

    @classmethod
    def constant(cls, a_hom, B_hom, C_hom=None, R_hom=None, T_hom=None) -> "EffectiveTensors":
        """Tensors given directly (macro-solver tests and manufactured problems)."""
        zero = np.zeros((3, 3))
        C = zero if C_hom is None else np.asarray(C_hom, float)
        R = zero if R_hom is None else np.asarray(R_hom, float)
        T = zero if T_hom is None else np.asarray(T_hom, float)
        a = np.asarray(a_hom, float)
        if a.ndim == 0:
            a = a * np.eye(2)
        return cls(a, np.asarray(B_hom, float),
                   {m: C for m in CHomMode}, {d: R for d in Domain}, {d: T for d in Domain})


def _require(correctors: CorrectorSet, *families: str) -> None:
    missing = [f for f in families if getattr(correctors, f) is None]
    if missing:
        raise MissingCorrectors(f"correctors not solved: {', '.join(missing)}")


def _corrected_strains(fields, order: int) -> np.ndarray:
    """``sym(e_i x e_j) - D(V_ij)`` at quadrature points, ``(3, ne, nq, 3)``."""
    return np.stack([tensors.sym_unit(i, j) - fem.strains_at_quadrature(f, order)
                     for (i, j), f in zip(PAIRS, fields)])


def _unit_strains(mesh: StructuredMesh, order: int) -> np.ndarray:
    nq = order * order
    return np.stack([np.broadcast_to(tensors.sym_unit(i, j), (mesh.num_elements, nq, 3))
                     for (i, j) in PAIRS])


def pairing(mesh: StructuredMesh, d_e: np.ndarray, left: np.ndarray, right: np.ndarray,
            order: int) -> np.ndarray:
    """``M[k, l] = int (D : left_k) : right_l`` for stored-form strain stacks."""
    stress = np.einsum("epr,kenr->kenp", d_e, left * tensors.ENGINEERING)
    return stress_pairing(mesh, stress, right, order)


def stress_pairing(mesh: StructuredMesh, stress: np.ndarray, right: np.ndarray,
                   order: int) -> np.ndarray:
    """``M[k, l] = int stress_k : right_l``."""
    out = np.empty((stress.shape[0], right.shape[0]))
    for k in range(stress.shape[0]):
        for l in range(right.shape[0]):
            out[k, l] = fem.integrate(mesh, tensors.ddot(stress[k], right[l]), order)
    return out


def assemble_a_hom(correctors: CorrectorSet, coeffs: PhaseCoefficients,
                   order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Energy-form and averaging-form homogenized dielectric matrix."""
    _require(correctors, "chi")
    mesh = correctors.mesh
    a_e = coeffs.a_elements(mesh)
    grads = cells.corrected_gradients(correctors.chi, order)  # (2, ne, nq, 2)
    flux = np.einsum("ekl,ienl->ienk", a_e, grads)
    energy = np.array([[fem.integrate(mesh, np.sum(flux[i] * grads[j], axis=-1), order)
                        for j in range(2)] for i in range(2)])
    averaging = np.array([[fem.integrate(mesh, flux[i][..., j], order)
                           for j in range(2)] for i in range(2)])
    return energy, averaging


def assemble_B_hom(correctors: CorrectorSet, coeffs: PhaseCoefficients,
                   order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    _require(correctors, "V")
    mesh = correctors.mesh
    b_e = coeffs.B_elements(mesh)
    corrected = _corrected_strains(correctors.V, order)
    energy = pairing(mesh, b_e, corrected, corrected, order)
    averaging = pairing(mesh, b_e, corrected, _unit_strains(mesh, order), order)
    return energy, averaging


def electrostriction_stress(correctors: CorrectorSet, coeffs: PhaseCoefficients,
                            order: int = 2) -> np.ndarray:
    """``B : D(p_ij) + C : sym(G_ij)`` at quadrature points, ``(3, ne, nq, 3)``."""
    _require(correctors, "chi", "p")
    mesh = correctors.mesh
    b_e = coeffs.B_elements(mesh)
    dp = np.stack([fem.strains_at_quadrature(f, order) for f in correctors.p])
    elastic = np.einsum("epr,kenr->kenp", b_e, dp * tensors.ENGINEERING)
    return elastic + cells.electrostriction_source(mesh, correctors.chi, coeffs, order)


def assemble_C_hom(correctors: CorrectorSet, coeffs: PhaseCoefficients,
                   mode: CHomMode | str = CHomMode.WEAK_FORM, order: int = 2) -> np.ndarray:
    _require(correctors, "chi", "V", "p")
    mode = CHomMode(mode)
    mesh = correctors.mesh
    stress = electrostriction_stress(correctors, coeffs, order)
    if mode is CHomMode.WEAK_FORM:
        return stress_pairing(mesh, stress, _corrected_strains(correctors.V, order), order)
    return stress_pairing(mesh, stress, stress, order)


def assemble_R_hom(correctors: CorrectorSet, coeffs: PhaseCoefficients,
                   domain: Domain | str = Domain.INCLUSION, order: int = 2) -> np.ndarray:
    _require(correctors, "W")
    mesh = correctors.mesh
    r_e = coeffs.R_elements(mesh, full_cell=Domain(domain) is Domain.FULL_CELL)
    corrected = _corrected_strains(correctors.W, order)
    return pairing(mesh, r_e, corrected, corrected, order)


def assemble_T_hom(correctors: CorrectorSet, coeffs: PhaseCoefficients,
                   domain: Domain | str = Domain.INCLUSION, order: int = 2) -> np.ndarray:
    _require(correctors, "V")
    mesh = correctors.mesh
    r_e = coeffs.R_elements(mesh, full_cell=Domain(domain) is Domain.FULL_CELL)
    corrected = _corrected_strains(correctors.V, order)
    return pairing(mesh, r_e, corrected, corrected, order)


def _mandel_inv(voigt: np.ndarray) -> np.ndarray:
    return np.linalg.inv(tensors.mandel(voigt))


def voigt_reuss_bounds(coeffs: PhaseCoefficients, inclusion_fraction: float) -> dict:
    """Arithmetic (Voigt) and harmonic (Reuss) phase averages of ``a`` and ``B``.

    The harmonic mean is the inverse of the averaged inverse, taken in the
    orthonormal (Mandel) basis for the elastic tensor.
    """
    if not 0.0 <= inclusion_fraction <= 1.0:
        raise ValueError("inclusion fraction must lie in [0, 1]")
    t = inclusion_fraction
    a_f, a_s = coeffs.a[Phase.MATRIX], coeffs.a[Phase.INCLUSION]
    a_voigt = (1 - t) * a_f + t * a_s
    a_reuss = np.linalg.inv((1 - t) * np.linalg.inv(a_f) + t * np.linalg.inv(a_s))
    b_f, b_s = coeffs.B[Phase.MATRIX].voigt(), coeffs.B[Phase.INCLUSION].voigt()
    b_voigt = (1 - t) * b_f + t * b_s
    m = np.linalg.inv((1 - t) * _mandel_inv(b_f) + t * _mandel_inv(b_s))
    b_reuss = m / tensors.mandel(np.ones((3, 3)))
    return {"a": {"reuss": a_reuss, "voigt": a_voigt},
            "B": {"reuss": b_reuss, "voigt": b_voigt}}


def _diag_inside(value: np.ndarray, lo: np.ndarray, hi: np.ndarray, slack: float) -> bool:
    d, l, u = np.diag(value), np.diag(lo), np.diag(hi)
    return bool(np.all(d >= l - slack * np.abs(l)) and np.all(d <= u + slack * np.abs(u)))


def assemble_effective_tensors(correctors: CorrectorSet, coeffs: PhaseCoefficients,
                               c_hom_mode: CHomMode | str = CHomMode.WEAK_FORM,
                               domain: Domain | str = Domain.INCLUSION,
                               order: int = 2, check: bool = True) -> EffectiveTensors:
    mesh = correctors.mesh
    a_energy, a_avg = assemble_a_hom(correctors, coeffs, order)
    b_energy, b_avg = assemble_B_hom(correctors, coeffs, order)
    c_all = {m: assemble_C_hom(correctors, coeffs, m, order) for m in CHomMode}
    if correctors.W is not None:
        r_all = {d: assemble_R_hom(correctors, coeffs, d, order) for d in Domain}
    else:
        r_all = {d: np.zeros((3, 3)) for d in Domain}
    t_all = {d: assemble_T_hom(correctors, coeffs, d, order) for d in Domain}

    checks = {
        "a_hom_energy_vs_averaging": float(np.abs(a_energy - a_avg).max()),
        "B_hom_energy_vs_averaging": float(np.abs(b_energy - b_avg).max()),
        "C_hom_weak_form_vs_stress_product": float(
            np.abs(c_all[CHomMode.WEAK_FORM] - c_all[CHomMode.STRESS_PRODUCT]).max()),
        "R_hom_full_cell_vs_inclusion": float(
            np.abs(r_all[Domain.FULL_CELL] - r_all[Domain.INCLUSION]).max()),
        "T_hom_full_cell_vs_inclusion": float(
            np.abs(t_all[Domain.FULL_CELL] - t_all[Domain.INCLUSION]).max()),
        "a_hom_asymmetry": float(np.abs(a_energy - a_energy.T).max()),
        "B_hom_major_asymmetry": tensors.major_asymmetry(b_energy),
        "R_hom_major_asymmetry": tensors.major_asymmetry(r_all[Domain(domain)]),
        "T_hom_major_asymmetry": tensors.major_asymmetry(t_all[Domain(domain)]),
        "B_hom_min_eigenvalue": tensors.min_eigenvalue(b_energy),
        "R_hom_min_eigenvalue": tensors.min_eigenvalue(r_all[Domain(domain)]),
    }
    fraction = mesh.phase_fraction(Phase.INCLUSION)
    bounds = voigt_reuss_bounds(coeffs, fraction)
    bounds_report = {
        "inclusion_fraction": fraction,
        "a": {"reuss": bounds["a"]["reuss"], "voigt": bounds["a"]["voigt"],
              "inside": _diag_inside(a_energy, bounds["a"]["reuss"], bounds["a"]["voigt"], 1e-10)},
        "B": {"reuss": bounds["B"]["reuss"], "voigt": bounds["B"]["voigt"],
              "inside": _diag_inside(b_energy, bounds["B"]["reuss"], bounds["B"]["voigt"], 1e-10)},
    }
    if check:
        if checks["a_hom_energy_vs_averaging"] > IDENTITY_TOL:
            raise BoundsViolation(
                f"a_hom energy and averaging forms differ by {checks['a_hom_energy_vs_averaging']:.3e}")
        if checks["B_hom_energy_vs_averaging"] > IDENTITY_TOL:
            raise BoundsViolation(
                f"B_hom energy and averaging forms differ by {checks['B_hom_energy_vs_averaging']:.3e}")
        if np.linalg.eigvalsh(0.5 * (a_energy + a_energy.T)).min() <= 0:
            raise BoundsViolation("a_hom is not positive definite")
        if not (bounds_report["a"]["inside"] and bounds_report["B"]["inside"]):
            raise BoundsViolation("effective tensor outside the Voigt-Reuss bounds")
    logger.debug("effective tensors: a_hom=%s", a_energy.tolist())
    return EffectiveTensors(a_energy, b_energy, c_all, r_all, t_all,
                            CHomMode(c_hom_mode), Domain(domain), checks, bounds_report)
