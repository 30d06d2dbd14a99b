import math

import numpy as np
import pytest

from hichom import dns, fem, verification
from hichom.cells import PhaseCoefficients
from hichom.errors import LadderMismatch, MeshMismatch
from hichom.fem import FeField
from hichom.geometry import StructuredMesh, UnitCellGeometry, build_macro_mesh
from hichom.selftest import disk_coefficients, laminate_coefficients
from hichom.verification import StudySetup

from conftest import solve_cell


def linear_h(x1, x2):
    return x1


def ones(x1, x2):
    return np.ones_like(x1)


def unit_load(x1, x2):
    return np.ones_like(x1), np.ones_like(x1)


def test_homogeneous_medium_has_no_homogenization_error():
    coeffs = PhaseCoefficients.isotropic(a_matrix=2.0, a_inclusion=2.0, B_inclusion=(1.0, 1.0),
                                         C_matrix=(0.1, 0.1), C_inclusion=(0.1, 0.1))
    setup = StudySetup(coeffs, UnitCellGeometry.disk(0.25), (0.5, 0.25), 4, h=linear_h)
    report = verification.run_convergence_study(setup)
    assert max(report.phi_l2_errors) <= 1e-12
    assert max(report.corrector_h1_residuals) <= 1e-10
    assert max(report.uncorrected_gradient_errors) <= 1e-10
    assert max(report.u_l2_errors) <= 1e-12


@pytest.fixture(scope="module")
def laminate_report():
    setup = StudySetup(laminate_coefficients(), UnitCellGeometry.laminate(0.5), (0.5, 0.25, 0.125), 8,
                       f=ones, g=unit_load, h=linear_h)
    return verification.run_convergence_study(setup, {"label": "laminate"})


def test_laminate_ladder_converges(laminate_report):
    r = laminate_report
    assert r.phi_l2_errors[0] > r.phi_l2_errors[1] > r.phi_l2_errors[2]
    for resid, plain in zip(r.corrector_h1_residuals, r.uncorrected_gradient_errors):
        assert resid < plain
    resid = r.corrector_h1_residuals
    assert resid[0] > resid[1] > resid[2]
    # the gradient does not converge without the corrector
    assert min(r.uncorrected_gradient_errors) > 0.1


def test_report_shape(laminate_report):
    r = laminate_report
    n = len(r.epsilons)
    for name in ("phi_l2_errors", "u_l2_errors", "corrector_h1_residuals",
                 "uncorrected_gradient_errors", "u_h1_distances", "splitting_residuals", "norms"):
        values = getattr(r, name)
        assert len(values) == n
    flat = [v for row in r.rows() for v in row.values()]
    assert all(math.isfinite(v) and v >= 0 for v in flat)
    assert [row["epsilon"] for row in r.rows()] == [0.5, 0.25, 0.125]
    d = r.to_dict()
    assert d["config"] == {"label": "laminate"}
    assert max(r.splitting_residuals) <= 1e-12
    for a, b in zip(r.u_l2_errors, r.u_h1_distances):
        assert b >= a


def test_tensor_cross_check_values(disk_correctors):
    correctors, coeffs = disk_correctors
    checks = verification.tensor_cross_check(correctors, coeffs)
    assert checks["a_hom_energy_vs_averaging"] <= 1e-10
    assert checks["B_hom_energy_vs_averaging"] <= 1e-10
    fraction = correctors.mesh.phase_fraction(1)
    lam, mu = coeffs.R.lam, coeffs.R.mu
    assert checks["R_hom_full_cell_vs_inclusion"] == pytest.approx((1 - fraction) * (lam + 2 * mu))
    assert checks["C_hom_weak_form_vs_stress_product"] > 0


def test_corrector_residual_needs_matching_domains():
    phi = FeField(build_macro_mesh(1.0, 8), np.zeros(81))
    other = FeField(build_macro_mesh(2.0, 8), np.zeros(81))
    correctors = solve_cell(UnitCellGeometry.disk(0.25), disk_coefficients(), 8)
    with pytest.raises(MeshMismatch):
        verification.corrector_residual(phi, other, correctors.chi, 0.5)
    shifted = FeField(StructuredMesh(8, 1.0, np.zeros(64), origin=(0.5, 0.0)), np.zeros(81))
    with pytest.raises(MeshMismatch):
        verification.corrector_residual(phi, phi, (shifted, shifted), 0.5)


def two_slope_profile(x1, x2=None):
    """``x1 + eps chi_1(x1 / eps)`` for the a = (4 | 1) laminate at eps = 1/2."""
    s = 2 * np.asarray(x1, float)
    k = np.minimum(np.floor(s), 1.0)
    y = s - k
    return (k + np.where(y <= 0.5, 0.4 * y, 0.2 + 1.6 * (y - 0.5))) / 2


def test_corrector_residual_vanishes_for_layered_potential():
    coeffs = laminate_coefficients()
    geometry = UnitCellGeometry.laminate(0.5)
    correctors = solve_cell(geometry, coeffs, 8)
    problem = dns.DnsProblem(0.5, 8, coeffs, geometry, h=two_slope_profile)
    phi = dns.solve_phi_eps(problem)
    mesh0 = phi.mesh.with_phases(np.zeros(phi.mesh.num_elements, dtype=int))
    phi0 = FeField(mesh0, mesh0.node_coordinates[:, 0])
    assert verification.corrector_residual(phi, phi0, correctors.chi, 0.5) <= 1e-10
    assert verification._gradient_distance(phi, phi0) > 0.1


def test_ladder_validation():
    with pytest.raises(LadderMismatch):
        StudySetup(disk_coefficients(), UnitCellGeometry.disk(0.25), (0.5, 0.3))
    with pytest.raises(LadderMismatch):
        StudySetup(disk_coefficients(), UnitCellGeometry.disk(0.25), ())


def test_study_is_deterministic():
    setup = StudySetup(disk_coefficients(C=(0.1, 0.1)), UnitCellGeometry.disk(0.25), (0.5, 0.25), 4,
                       f=ones, g=unit_load, h=linear_h)
    a = verification.run_convergence_study(setup).to_dict()
    b = verification.run_convergence_study(setup).to_dict()
    threaded = verification.run_convergence_study(
        StudySetup(setup.coeffs, setup.geometry, setup.epsilons, 4, f=ones, g=unit_load, h=linear_h,
                   threads=2)).to_dict()
    assert a == b == threaded


def test_l2_error_of_interpolant():
    mesh = build_macro_mesh(1.0, 16)
    x = mesh.node_coordinates
    field = FeField(mesh, x[:, 0] + 2 * x[:, 1])
    assert verification.l2_error(field, lambda a, b: a + 2 * b) <= 1e-14
    vec = FeField(mesh, np.column_stack([x[:, 0], x[:, 1]]))
    assert verification.l2_error(vec, lambda a, b: (a, b)) <= 1e-14
    assert verification.l2_error(FeField(mesh, np.zeros(289)), lambda a, b: np.ones_like(a)) == \
        pytest.approx(fem.l2_norm(FeField(mesh, np.ones(289))))
