"""Invariant suite behind the ``selftest`` command.

Each check solves a small fixed configuration and returns the measured values
alongside a pass flag. Reports contain no timings, so repeated runs are
byte-identical.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import cells, effective, fem, macro, tensors, verification
from .cells import PhaseCoefficients
from .effective import Domain, EffectiveTensors
from .fem import SolverConfig
from .geometry import UnitCellGeometry, build_macro_mesh, build_periodic_map, build_unit_cell_mesh

PI = math.pi

TENSOR_TOL = 1e-10
CORRECTOR_TOL = 1e-10
LAMINATE_TOL = 1e-8
IDENTITY_TOL = 1e-8
SYMMETRY_TOL = 1e-10
RATE_RANGE = (3.0, 5.0)
BOUND_RATIO = 2.0
SPLIT_TOL = 1e-12
DISK_REUSS, DISK_VOIGT = 1.2146, 2.7672


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    values: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"criterion": self.number, "name": self.name, "passed": bool(self.passed),
                "values": self.values}


def disk_coefficients(C=(0.0, 0.0)) -> PhaseCoefficients:
    return PhaseCoefficients.isotropic(a_matrix=1.0, a_inclusion=10.0, B_matrix=(1.0, 1.0),
                                       B_inclusion=(10.0, 10.0), R=(1.0, 1.0),
                                       C_matrix=C, C_inclusion=C)


def constant_coefficients() -> PhaseCoefficients:
    return PhaseCoefficients(
        a={0: np.array([[2.0, 0.3], [0.3, 1.5]]), 1: np.array([[2.0, 0.3], [0.3, 1.5]])},
        B={p: tensors.IsotropicElasticTensor(1.5, 0.8) for p in (0, 1)},
        R=tensors.IsotropicElasticTensor(1.0, 1.0),
        C={p: cells.ElectrostrictionTensor(0.2, 0.1) for p in (0, 1)})


def laminate_coefficients() -> PhaseCoefficients:
    return PhaseCoefficients.isotropic(a_matrix=1.0, a_inclusion=4.0, B_matrix=(1.0, 1.0),
                                       B_inclusion=(4.0, 4.0))


def homogenize_cell(geometry: UnitCellGeometry, coeffs: PhaseCoefficients, n: int = 64,
                    cfg: SolverConfig = SolverConfig(), threads: int = 1, check: bool = True):
    mesh = build_unit_cell_mesh(geometry, n)
    pmap = build_periodic_map(mesh)
    correctors = cells.solve_all(mesh, pmap, coeffs, cfg, threads, geometry)
    t = effective.assemble_effective_tensors(correctors, coeffs, domain=Domain.INCLUSION,
                                             order=cfg.quadrature_order, check=check)
    return correctors, t


def _max_abs(a) -> float:
    return float(np.abs(np.asarray(a)).max())


# ----------------------------------------------------------------- criteria

def check_trivial_limit(n: int = 64, threads: int = 1) -> CheckResult:
    coeffs = constant_coefficients()
    correctors, t = homogenize_cell(UnitCellGeometry.disk(0.25), coeffs, n, threads=threads)
    seminorms = {}
    for family in ("chi", "V", "p", "W"):
        seminorms[family] = max(fem.h1_seminorm(f) for f in getattr(correctors, family))
    a_gap = _max_abs(t.a_hom - coeffs.a[0])
    b_gap = _max_abs(t.B_hom - coeffs.B[0].voigt())
    ok = a_gap <= TENSOR_TOL and b_gap <= TENSOR_TOL and max(seminorms.values()) <= CORRECTOR_TOL
    return CheckResult(1, "trivial limit", ok, {"a_hom_gap": a_gap, "B_hom_gap": b_gap,
                                                "corrector_h1_seminorms": seminorms})


def check_laminate(n: int = 64, threads: int = 1) -> CheckResult:
    _, t = homogenize_cell(UnitCellGeometry.laminate(0.5), laminate_coefficients(), n,
                           threads=threads)
    expected = np.diag([1.6, 2.5])
    gap = _max_abs(t.a_hom - expected)
    return CheckResult(2, "laminate oracle", gap <= LAMINATE_TOL,
                       {"a_hom": t.a_hom.tolist(), "gap": gap})


def check_bounds(n: int = 64, threads: int = 1) -> CheckResult:
    geometry = UnitCellGeometry.disk(0.25)
    coeffs = disk_coefficients()
    _, t = homogenize_cell(geometry, coeffs, n, threads=threads)
    diag = np.diag(t.a_hom)
    a_ok = bool(np.all((diag > DISK_REUSS) & (diag < DISK_VOIGT)) and abs(t.a_hom[0, 1]) < 1e-8)
    b_diag = np.diag(t.B_hom)
    b_ok = True
    intervals = {}
    for label, frac in (("discrete", t.bounds["inclusion_fraction"]),
                        ("exact", geometry.exact_inclusion_fraction())):
        bounds = effective.voigt_reuss_bounds(coeffs, frac)["B"]
        lo, hi = np.diag(bounds["reuss"]), np.diag(bounds["voigt"])
        intervals[label] = {"reuss": lo.tolist(), "voigt": hi.tolist()}
        b_ok = b_ok and bool(np.all((b_diag > lo) & (b_diag < hi)))
    return CheckResult(3, "Voigt-Reuss bounds", a_ok and b_ok,
                       {"a_hom": t.a_hom.tolist(), "a_interval": [DISK_REUSS, DISK_VOIGT],
                        "B_hom_diagonal": b_diag.tolist(), "B_intervals": intervals})


def default_configurations():
    return {
        "constant": (UnitCellGeometry.disk(0.25), constant_coefficients()),
        "laminate": (UnitCellGeometry.laminate(0.5), laminate_coefficients()),
        "disk": (UnitCellGeometry.disk(0.25), disk_coefficients()),
        "disk_electrostrictive": (UnitCellGeometry.disk(0.25), disk_coefficients(C=(0.1, 0.1))),
    }


def check_identities(n: int = 64, threads: int = 1) -> CheckResult:
    gaps = {}
    for name, (geometry, coeffs) in default_configurations().items():
        _, t = homogenize_cell(geometry, coeffs, n, threads=threads, check=False)
        gaps[name] = {"a_hom": t.checks["a_hom_energy_vs_averaging"],
                      "B_hom": t.checks["B_hom_energy_vs_averaging"]}
    worst = max(max(g.values()) for g in gaps.values())
    return CheckResult(4, "energy vs averaging forms", worst <= IDENTITY_TOL,
                       {"gaps": gaps, "worst": worst})


def check_symmetry(n: int = 64, threads: int = 1) -> CheckResult:
    _, t = homogenize_cell(UnitCellGeometry.disk(0.25), disk_coefficients(), n, threads=threads)
    asym = {name: tensors.major_asymmetry(getattr(t, name)) for name in ("B_hom", "R_hom", "T_hom")}
    stored_min = float(np.linalg.eigvalsh(0.5 * (t.B_hom + t.B_hom.T)).min())
    mandel_min = tensors.min_eigenvalue(t.B_hom)
    ok = max(asym.values()) <= SYMMETRY_TOL and stored_min > 0 and mandel_min > 0
    return CheckResult(5, "symmetry and ellipticity", ok,
                       {"major_asymmetry": asym, "B_hom_min_eigenvalue": stored_min,
                        "B_hom_min_eigenvalue_orthonormal": mandel_min})


# manufactured solutions -------------------------------------------------------

MANUFACTURED_A = np.array([[2.0, 0.5], [0.5, 1.0]])
MANUFACTURED_LAME = (2.0, 1.0)


def scalar_exact(x1, x2):
    return np.sin(PI * x1) * np.sin(PI * x2) + x1


def scalar_source(x1, x2):
    a = MANUFACTURED_A
    return (PI ** 2 * (a[0, 0] + a[1, 1]) * np.sin(PI * x1) * np.sin(PI * x2)
            - 2.0 * a[0, 1] * PI ** 2 * np.cos(PI * x1) * np.cos(PI * x2))


def vector_exact(x1, x2):
    return (np.sin(PI * x1) * np.sin(PI * x2), np.sin(2 * PI * x1) * np.sin(PI * x2))


def vector_body_force(x1, x2):
    lam, mu = MANUFACTURED_LAME
    s, c = np.sin, np.cos
    v1, v2 = vector_exact(x1, x2)
    ddiv_dx = -PI ** 2 * s(PI * x1) * s(PI * x2) + 2 * PI ** 2 * c(2 * PI * x1) * c(PI * x2)
    ddiv_dy = PI ** 2 * c(PI * x1) * c(PI * x2) - PI ** 2 * s(2 * PI * x1) * s(PI * x2)
    return (2 * PI ** 2 * mu * v1 - (lam + mu) * ddiv_dx,
            5 * PI ** 2 * mu * v2 - (lam + mu) * ddiv_dy)


def manufactured_errors(ns=(16, 32, 64)) -> dict[str, list[float]]:
    b = tensors.IsotropicElasticTensor(*MANUFACTURED_LAME).voigt()
    t = EffectiveTensors.constant(MANUFACTURED_A, b, R_hom=np.eye(3))
    out = {"n": list(ns), "scalar": [], "vector": []}
    for n in ns:
        problem = macro.MacroProblem(build_macro_mesh(1.0, n), t, f=scalar_source,
                                     g=vector_body_force, h=scalar_exact)
        phi0 = macro.solve_phi0(problem)
        v0 = macro.solve_v0(problem, phi0)
        out["scalar"].append(verification.l2_error(phi0, scalar_exact))
        out["vector"].append(verification.l2_error(v0, vector_exact))
    return out


def check_manufactured() -> CheckResult:
    errs = manufactured_errors()
    ratios = {k: [errs[k][i] / errs[k][i + 1] for i in range(len(errs[k]) - 1)]
              for k in ("scalar", "vector")}
    lo, hi = RATE_RANGE
    ok = all(lo <= r <= hi for rs in ratios.values() for r in rs)
    return CheckResult(6, "manufactured convergence", ok, {"errors": errs, "ratios": ratios})


# epsilon ladder ------------------------------------------------------------------

def ladder_setup(threads: int = 1) -> verification.StudySetup:
    return verification.StudySetup(
        disk_coefficients(), UnitCellGeometry.disk(0.25), epsilons=(0.5, 0.25, 0.125),
        cells_per_period=8, f=lambda x1, x2: np.ones_like(x1),
        g=lambda x1, x2: (np.ones_like(x1), np.ones_like(x1)), h=lambda x1, x2: x1,
        threads=threads)


def _strictly_decreasing(values) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def scaled_w_saturates(values, u_norms, v_norms) -> bool:
    """Growth of the sequence does not accelerate and stays inside the a-priori bound."""
    steps = np.diff(values)
    decelerating = bool(np.all(steps[1:] <= steps[:-1]))
    bounded = all(w <= u + v for w, u, v in zip(values, u_norms, v_norms))
    return decelerating and bounded


def ladder_checks(report: verification.ConvergenceReport) -> list[CheckResult]:
    phi, resid, plain = report.phi_l2_errors, report.corrector_h1_residuals, \
        report.uncorrected_gradient_errors
    c7 = CheckResult(7, "electrostatic convergence",
                     _strictly_decreasing(phi) and all(r < p for r, p in zip(resid, plain)),
                     {"phi_l2_errors": phi, "corrector_residuals": resid,
                      "uncorrected_gradient_errors": plain})
    c8 = CheckResult(8, "high-contrast elastic convergence", _strictly_decreasing(report.u_l2_errors),
                     {"u_l2_errors": report.u_l2_errors})
    totals = [n["u_h1"] + n["phi_h1"] for n in report.norms]
    ratio = max(totals) / min(totals)
    scaled_w = [n["scaled_w_h1"] for n in report.norms]
    saturates = scaled_w_saturates(scaled_w, [n["u_h1"] for n in report.norms],
                                   [n["v_h1"] for n in report.norms])
    c9 = CheckResult(9, "uniform bounds", ratio < BOUND_RATIO and saturates,
                     {"u_plus_phi_h1": totals, "max_min_ratio": ratio,
                      "scaled_w_h1": scaled_w, "scaled_w_saturates": saturates})
    c10 = CheckResult(10, "splitting identity", max(report.splitting_residuals) <= SPLIT_TOL,
                      {"relative_residuals": report.splitting_residuals})
    return [c7, c8, c9, c10]


def check_determinism(threads: int = 1) -> CheckResult:
    """Two identical cell solves must serialize to identical bytes."""
    dumps = []
    for _ in range(2):
        _, t = homogenize_cell(UnitCellGeometry.disk(0.25), disk_coefficients(C=(0.1, 0.1)), 32,
                               threads=threads)
        dumps.append(json.dumps({k: getattr(t, k).tolist()
                                 for k in ("a_hom", "B_hom", "C_hom", "R_hom", "T_hom")}))
    return CheckResult(11, "determinism", dumps[0] == dumps[1], {"identical": dumps[0] == dumps[1]})


def run_selftest(threads: int = 1) -> dict:
    results = [check_trivial_limit(threads=threads), check_laminate(threads=threads),
               check_bounds(threads=threads), check_identities(threads=threads),
               check_symmetry(threads=threads), check_manufactured()]
    results += ladder_checks(verification.run_convergence_study(ladder_setup(threads)))
    results.append(check_determinism(threads))
    return {"passed": all(r.passed for r in results), "checks": [r.to_dict() for r in results]}
