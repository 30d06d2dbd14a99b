import numpy as np
import pytest

from hichom import dns, fem, macro, verification
from hichom.cells import PhaseCoefficients
from hichom.dns import DnsProblem
from hichom.effective import EffectiveTensors
from hichom.errors import LadderMismatch, ResolutionTooCoarse
from hichom.geometry import Phase, UnitCellGeometry, build_unit_cell_mesh
from hichom.selftest import disk_coefficients

DISK = UnitCellGeometry.disk(0.25)


def ones(x1, x2):
    return np.ones_like(x1)


def unit_load(x1, x2):
    return np.ones_like(x1), np.ones_like(x1)


def linear_h(x1, x2):
    return x1


def test_single_period_matches_unit_cell_labels():
    problem = DnsProblem(1.0, 8, disk_coefficients(), DISK)
    np.testing.assert_array_equal(dns.fine_mesh(problem).element_phase,
                                  build_unit_cell_mesh(DISK, 8).element_phase)


def test_phase_tiles_periodically():
    m = 8
    problem = DnsProblem(0.25, m, disk_coefficients(), DISK)
    phase = dns.fine_mesh(problem).element_phase.reshape(4 * m, 4 * m)
    cell = build_unit_cell_mesh(DISK, m).element_phase.reshape(m, m)
    np.testing.assert_array_equal(phase, np.tile(cell, (4, 4)))
    assert abs(np.mean(phase == Phase.INCLUSION) - DISK.exact_inclusion_fraction()) <= 2 / m


def test_input_validation():
    with pytest.raises(ResolutionTooCoarse):
        DnsProblem(0.5, 3, disk_coefficients(), DISK)
    for eps in (0.3, 0.0, -0.5, 2.0):
        with pytest.raises(LadderMismatch):
            DnsProblem(eps, 8, disk_coefficients(), DISK)
    assert dns.periods_per_side(0.125) == 8


def test_default_multiplier_follows_gamma():
    coeffs = PhaseCoefficients.isotropic(gamma=0.5)
    assert DnsProblem(0.25, 8, coeffs, DISK).multiplier == pytest.approx(4.0)
    assert DnsProblem(0.25, 8, disk_coefficients(), DISK).multiplier == pytest.approx(16.0)
    assert DnsProblem(0.25, 8, coeffs, DISK, inclusion_multiplier=3.0).multiplier == 3.0


def two_slope_profile(k):
    """Layered potential for a = 4 on y1 < 1/2 and 1 elsewhere with k periods: flux 1.6 throughout."""
    def profile(x1, x2=None):
        s = k * np.asarray(x1, float)
        j = np.minimum(np.floor(s), k - 1.0)
        y = s - j
        return (j + np.where(y <= 0.5, 0.4 * y, 0.2 + 1.6 * (y - 0.5))) / k
    return profile


@pytest.mark.parametrize("eps", [1.0, 0.5])
def test_laminate_potential_is_exact_two_slope_profile(eps):
    # boundary data follow the profile; h = x1 on the top and bottom edges would rule out a 1D solution
    coeffs = PhaseCoefficients.isotropic(a_matrix=1.0, a_inclusion=4.0)
    profile = two_slope_profile(round(1 / eps))
    problem = DnsProblem(eps, 8, coeffs, UnitCellGeometry.laminate(0.5), h=profile)
    phi = dns.solve_phi_eps(problem)
    x = phi.mesh.node_coordinates[:, 0]
    np.testing.assert_allclose(phi.values[:, 0], profile(x), atol=1e-12)
    assert profile(1.0) == pytest.approx(1.0)


def test_identical_phases_match_the_homogeneous_problem():
    coeffs = PhaseCoefficients.isotropic(a_matrix=2.0, a_inclusion=2.0, B_inclusion=(1.0, 1.0),
                                         C_matrix=(0.1, 0.2), C_inclusion=(0.1, 0.2))
    problem = DnsProblem(0.5, 4, coeffs, DISK, f=ones, g=unit_load, h=linear_h)
    run = dns.run_dns(problem)
    t = EffectiveTensors.constant(2.0, coeffs.B[Phase.MATRIX].voigt(), C_hom=coeffs.C[Phase.MATRIX].voigt())
    ref = macro.MacroProblem(run.mesh.with_phases(np.zeros(run.mesh.num_elements, dtype=int)),
                             t, ones, unit_load, linear_h)
    phi0 = macro.solve_phi0(ref)
    np.testing.assert_allclose(run.phi.values, phi0.values, atol=1e-12)
    np.testing.assert_allclose(run.v.values, macro.solve_v0(ref, phi0).values, atol=1e-12)


def test_no_load_no_displacement():
    problem = DnsProblem(0.5, 4, disk_coefficients(C=(0.0, 0.0)), DISK, f=ones, h=linear_h)
    run = dns.run_dns(problem)
    assert np.abs(run.u.values).max() == 0.0 and np.abs(run.w.values).max() == 0.0


def test_zero_multiplier_gives_u_equal_v():
    problem = DnsProblem(0.5, 4, disk_coefficients(), DISK, g=unit_load, inclusion_multiplier=0.0)
    run = dns.run_dns(problem)
    np.testing.assert_array_equal(run.u.values, run.v.values)


def test_unit_multiplier_is_bounded_coefficient_problem():
    problem = DnsProblem(0.5, 4, disk_coefficients(C=(0.1, 0.2)), DISK, f=ones, g=unit_load, h=linear_h,
                         inclusion_multiplier=1.0)
    mesh = dns.fine_mesh(problem)
    phi = dns.solve_phi_eps(problem, mesh=mesh)
    u = dns.solve_u_eps(problem, phi)
    d_e = problem.coeffs.B_elements(mesh) + problem.coeffs.R_elements(mesh)
    K = fem.elasticity_operator_from_elements(mesh, d_e)
    system = fem.apply_constraints(K, dns.fine_load(problem, phi), fem.Dirichlet(mesh.boundary_nodes),
                                   mesh=mesh, ncomp=2)
    np.testing.assert_allclose(u.flat, fem.solve_reduced(system), atol=1e-13)


def test_stiff_inclusions_shed_strain():
    fractions = []
    for multiplier in (1.0, 1e2, 1e4):
        problem = DnsProblem(0.25, 8, disk_coefficients(), DISK, g=unit_load,
                             inclusion_multiplier=multiplier)
        mesh = dns.fine_mesh(problem)
        phi = dns.solve_phi_eps(problem, mesh=mesh)
        fractions.append(dns.inclusion_strain_fraction(dns.solve_u_eps(problem, phi)))
    assert fractions[0] > fractions[1] > fractions[2]
    assert fractions[2] < 1e-4
    default = DnsProblem(0.25, 8, disk_coefficients(), DISK, g=unit_load)
    assert default.multiplier == 16.0
    u = dns.solve_u_eps(default, dns.solve_phi_eps(default))
    assert dns.inclusion_strain_fraction(u) < fractions[0]


@pytest.fixture(scope="module")
def coupled_run():
    problem = DnsProblem(0.25, 8, disk_coefficients(C=(0.1, 0.2)), DISK, f=ones, g=unit_load, h=linear_h)
    return dns.run_dns(problem)


def test_splitting_identity(coupled_run):
    eps = coupled_run.problem.epsilon
    np.testing.assert_allclose(coupled_run.v.values + eps * coupled_run.w.values,
                               coupled_run.u.values, atol=1e-14)
    assert verification.splitting_residual(coupled_run) <= 1e-12


def test_boundary_values(coupled_run):
    b = coupled_run.mesh.boundary_nodes
    for f in (coupled_run.u, coupled_run.v, coupled_run.w):
        assert np.all(f.values[b] == 0.0)
    x = coupled_run.mesh.node_coordinates[b]
    np.testing.assert_allclose(coupled_run.phi.values[b, 0], x[:, 0], atol=1e-14)


def test_energy_identity(coupled_run):
    problem, mesh = coupled_run.problem, coupled_run.mesh
    K = fem.elasticity_operator_from_elements(mesh, dns.high_contrast_elements(problem, mesh))
    u = coupled_run.u.flat
    load = dns.fine_load(problem, coupled_run.phi)
    assert u @ K @ u == pytest.approx(load @ u, rel=1e-9)


def test_norms_reported(coupled_run):
    norms = coupled_run.norms()
    assert set(norms) == {"phi_h1", "u_h1", "v_h1", "scaled_w_h1"}
    assert all(np.isfinite(v) and v >= 0 for v in norms.values())
    assert norms["scaled_w_h1"] == pytest.approx(fem.h1_norm(coupled_run.u - coupled_run.v))
