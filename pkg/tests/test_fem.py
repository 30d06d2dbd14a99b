import numpy as np
import pytest
import scipy.sparse as sp
import sympy
from hypothesis import given, settings, strategies as st

from hichom import fem
from hichom.errors import (InconsistentConstraints, MeshMismatch, NonEllipticTensor,
                           NonSpdCoefficient, SingularSystem, SolverDiverged)
from hichom.fem import Dirichlet, FeField, Periodic, PhaseFrozen, SolverConfig
from hichom.geometry import (Phase, StructuredMesh, UnitCellGeometry, build_macro_mesh,
                             build_periodic_map, build_unit_cell_mesh)
from hichom.tensors import IsotropicElasticTensor
from hichom.verification import l2_error

CG = SolverConfig(method="cg", tolerance=1e-12)


def unit_mesh(n):
    return StructuredMesh(n, 1.0, np.zeros(n * n))


def test_q1_laplacian_stencil_n2():
    mesh = unit_mesh(2)
    K = fem.assemble_scalar_operator(mesh, {Phase.MATRIX: 1.0}).toarray()
    # centre node couples to all 8 neighbours with -1/3, diagonal 8/3
    centre = 4
    assert np.isclose(K[centre, centre], 8 / 3)
    assert np.allclose(np.delete(K[centre], centre), -1 / 3)
    np.testing.assert_allclose(K @ np.ones(9), 0.0, atol=1e-12)
    np.testing.assert_allclose(K, K.T, atol=1e-15)


def test_scalar_operator_linear_in_coefficient():
    mesh = build_unit_cell_mesh(UnitCellGeometry.disk(0.25), 8)
    a = {Phase.MATRIX: np.array([[2.0, 0.3], [0.3, 1.0]]), Phase.INCLUSION: 5.0}
    K1 = fem.assemble_scalar_operator(mesh, a)
    K3 = fem.assemble_scalar_operator(mesh, {p: 3 * np.asarray(v) for p, v in a.items()})
    assert abs(K3 - 3 * K1).max() <= 1e-12 * abs(K1).max()


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(-0.05, 0.05))
def test_scalar_assembly_additive(a1, a2, off):
    mesh = build_unit_cell_mesh(UnitCellGeometry.disk(0.25), 6)
    A1 = {Phase.MATRIX: a1, Phase.INCLUSION: np.array([[a2, off], [off, a2]])}
    A2 = {Phase.MATRIX: a2, Phase.INCLUSION: a1}
    both = {p: np.asarray(fem.as_spd(A1[p])) + fem.as_spd(A2[p]) for p in Phase}
    lhs = fem.assemble_scalar_operator(mesh, both)
    rhs = fem.assemble_scalar_operator(mesh, A1) + fem.assemble_scalar_operator(mesh, A2)
    assert abs(lhs - rhs).max() <= 1e-12 * abs(lhs).max()


def test_laminate_energy_of_linear_field():
    mesh = build_unit_cell_mesh(UnitCellGeometry.laminate(0.5), 8)
    K = fem.assemble_scalar_operator(mesh, {Phase.MATRIX: 1.0, Phase.INCLUSION: 4.0})
    phi = mesh.node_coordinates[:, 0]
    assert np.isclose(phi @ K @ phi, 2.5, atol=1e-12)


def test_non_spd_coefficient_rejected():
    mesh = unit_mesh(4)
    with pytest.raises(NonSpdCoefficient):
        fem.assemble_scalar_operator(mesh, {Phase.MATRIX: np.array([[1.0, 2.0], [2.0, 1.0]])})
    with pytest.raises(NonSpdCoefficient):
        fem.assemble_scalar_operator(mesh, {Phase.MATRIX: np.array([[1.0, 0.1], [0.0, 1.0]])})


def test_elasticity_kernel_contains_rigid_motions():
    mesh = build_unit_cell_mesh(UnitCellGeometry.disk(0.25), 8)
    K = fem.assemble_elasticity_operator(
        mesh, {Phase.MATRIX: IsotropicElasticTensor(1.0, 1.0),
               Phase.INCLUSION: IsotropicElasticTensor(10.0, 5.0)})
    x = mesh.node_coordinates
    for field in (np.column_stack([np.ones(len(x)), np.zeros(len(x))]),
                  np.column_stack([np.zeros(len(x)), np.ones(len(x))]),
                  np.column_stack([-x[:, 1], x[:, 0]])):
        assert np.abs(K @ field.ravel()).max() <= 1e-10
    assert abs(K - K.T).max() <= 1e-12 * abs(K).max()


def test_phase_scale_multiplies_inclusion_elements():
    mesh = build_unit_cell_mesh(UnitCellGeometry.disk(0.25), 8)
    tensors = {Phase.MATRIX: IsotropicElasticTensor(0.0, 0.0 + 1.0),
               Phase.INCLUSION: IsotropicElasticTensor(2.0, 1.0)}
    only_incl = {Phase.INCLUSION: tensors[Phase.INCLUSION]}
    K_incl = fem.assemble_elasticity_operator(mesh, only_incl)
    K_scaled = fem.assemble_elasticity_operator(mesh, only_incl, {Phase.INCLUSION: 1e4})
    assert abs(K_scaled - 1e4 * K_incl).max() <= 1e-12 * abs(K_scaled).max()
    K_mix = fem.assemble_elasticity_operator(mesh, tensors, {Phase.INCLUSION: 1e4})
    K_mat = fem.assemble_elasticity_operator(mesh, {Phase.MATRIX: tensors[Phase.MATRIX]})
    assert abs(K_mix - (K_mat + K_scaled)).max() <= 1e-12 * abs(K_mix).max()


def test_non_elliptic_tensor_rejected():
    with pytest.raises(NonEllipticTensor):
        fem.assemble_elasticity_operator(unit_mesh(4), {Phase.MATRIX: IsotropicElasticTensor(1.0, 0.0)})
    with pytest.raises(NonEllipticTensor):
        fem.assemble_elasticity_operator(unit_mesh(4), {Phase.MATRIX: IsotropicElasticTensor(-1.0, 1.0)})


def test_element_stiffness_against_sympy():
    """Q1 element stiffness of the Laplacian on an h x h square, derived symbolically."""
    xs, ys, h = sympy.symbols("x y h", positive=True)
    N = [(1 - xs / h) * (1 - ys / h), xs / h * (1 - ys / h), xs / h * ys / h, (1 - xs / h) * ys / h]
    ke = sympy.Matrix(4, 4, lambda a, b: sympy.integrate(
        sympy.diff(N[a], xs) * sympy.diff(N[b], xs) + sympy.diff(N[a], ys) * sympy.diff(N[b], ys),
        (xs, 0, h), (ys, 0, h)))
    expected = np.array(ke.subs(h, 1), dtype=float)
    mesh = StructuredMesh(1, 1.0, np.zeros(1))
    K = fem.assemble_scalar_operator(mesh, {Phase.MATRIX: 1.0}).toarray()
    local = mesh.elements[0]
    np.testing.assert_allclose(K[np.ix_(local, local)], expected, atol=1e-14)


# --- constraints -------------------------------------------------------------

def test_dirichlet_reduced_dimension():
    mesh = build_macro_mesh(1.0, 4)
    K = fem.assemble_scalar_operator(mesh, {Phase.MATRIX: 1.0})
    system = fem.apply_constraints(K, np.zeros(25), Dirichlet(mesh.boundary_nodes, 0.0), mesh=mesh)
    assert system.dimension == 9


def test_periodic_reduced_dimension():
    mesh = unit_mesh(4)
    pmap = build_periodic_map(mesh)
    K = fem.assemble_scalar_operator(mesh, {Phase.MATRIX: 1.0})
    system = fem.apply_constraints(K, np.zeros(25), Periodic(pmap), mesh=mesh)
    assert system.dimension == 15
    Kv = fem.assemble_elasticity_operator(mesh, {Phase.MATRIX: IsotropicElasticTensor(1.0, 1.0)})
    assert fem.apply_constraints(Kv, np.zeros(50), Periodic(pmap), mesh=mesh, ncomp=2).dimension == 30


def test_phase_frozen_removes_matrix_only_nodes():
    mesh = build_unit_cell_mesh(UnitCellGeometry.disk(0.25), 16)
    K = fem.assemble_elasticity_operator(mesh, {Phase.INCLUSION: IsotropicElasticTensor(1.0, 1.0)})
    frozen = mesh.nodes_of_phase(Phase.MATRIX, exclusive=True)
    system = fem.apply_constraints(K, np.zeros(2 * mesh.num_nodes), PhaseFrozen(Phase.MATRIX),
                                   mesh=mesh, ncomp=2)
    assert system.dimension == 2 * (mesh.num_nodes - len(frozen))
    x = np.random.default_rng(0).normal(size=system.dimension)
    u = system.expand(x).reshape(-1, 2)
    assert np.all(u[frozen] == 0.0)


def test_dirichlet_on_periodic_slave_is_inconsistent():
    mesh = unit_mesh(4)
    K = fem.assemble_scalar_operator(mesh, {Phase.MATRIX: 1.0})
    slave = build_periodic_map(mesh).slaves[0]
    with pytest.raises(InconsistentConstraints):
        fem.apply_constraints(K, np.zeros(25), [Periodic(build_periodic_map(mesh)),
                                                Dirichlet(np.array([slave]), 1.0)], mesh=mesh)


def test_periodic_solution_is_periodic_and_zero_mean(rng):
    mesh = build_unit_cell_mesh(UnitCellGeometry.disk(0.3), 12)
    pmap = build_periodic_map(mesh)
    K = fem.assemble_scalar_operator(mesh, {Phase.MATRIX: 1.0, Phase.INCLUSION: 7.0})
    b = rng.normal(size=mesh.num_nodes)
    b = b - fem.nodal_weights(mesh) * (b.sum() / fem.nodal_weights(mesh).sum())  # compatible load
    b_per = np.zeros(mesh.num_nodes)
    np.add.at(b_per, pmap.master_of, b)
    system = fem.apply_constraints(K, b_per, Periodic(pmap), mesh=mesh)
    u = fem.solve_reduced(system)
    np.testing.assert_array_equal(u, u[pmap.master_of])
    assert abs(fem.nodal_weights(mesh) @ u) <= 1e-13


def test_energy_identity_after_solve(rng):
    mesh = build_macro_mesh(1.0, 16)
    K = fem.assemble_scalar_operator(mesh, {Phase.MATRIX: np.array([[2.0, 0.4], [0.4, 1.0]])})
    system = fem.apply_constraints(K, rng.normal(size=mesh.num_nodes),
                                   Dirichlet(mesh.boundary_nodes, 0.0), mesh=mesh)
    for cfg in (SolverConfig(), CG):
        x = fem.solve(system.op, system.rhs, cfg)
        assert abs(x @ system.op @ x - system.rhs @ x) <= 1e-9 * abs(system.rhs @ x)
        assert fem.relative_residual(system.op, x, system.rhs) <= 1e-10


# --- solves ------------------------------------------------------------------

def test_identity_and_diagonal_solves():
    r = np.array([3.0, -1.0, 2.5])
    np.testing.assert_allclose(fem.solve(sp.identity(3), r), r)
    np.testing.assert_allclose(fem.solve(sp.diags([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])
    np.testing.assert_allclose(fem.solve(sp.diags([2.0, 4.0]), [2.0, 4.0], CG), [1.0, 1.0])


def test_singular_factorization():
    with pytest.raises(SingularSystem):
        fem.solve(sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]])), [1.0, 2.0])


def test_cg_iteration_cap():
    mesh = build_macro_mesh(1.0, 32)
    K = fem.assemble_scalar_operator(mesh, {Phase.MATRIX: 1.0})
    system = fem.apply_constraints(K, np.ones(mesh.num_nodes), Dirichlet(mesh.boundary_nodes),
                                   mesh=mesh)
    with pytest.raises(SolverDiverged):
        fem.solve(system.op, system.rhs, SolverConfig(method="cg", max_iterations=3))


@pytest.mark.parametrize("bad", [dict(method="lu"), dict(tolerance=0.0), dict(tolerance=1e-3),
                                 dict(quadrature_order=1)])
def test_solver_config_validation(bad):
    with pytest.raises(ValueError):
        SolverConfig(**bad)


def poisson_error(n, cfg=SolverConfig()):
    mesh = build_macro_mesh(1.0, n)
    K = fem.assemble_scalar_operator(mesh, {Phase.MATRIX: 1.0})
    qp = fem.quadrature_points(mesh, 3)
    f = 2 * np.pi ** 2 * np.sin(np.pi * qp[..., 0]) * np.sin(np.pi * qp[..., 1])
    system = fem.apply_constraints(K, fem.source_load(mesh, f, 3), Dirichlet(mesh.boundary_nodes),
                                   mesh=mesh)
    u = FeField(mesh, fem.solve_reduced(system, cfg))
    return l2_error(u, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))


def test_poisson_manufactured_convergence():
    errs = [poisson_error(n) for n in (16, 32, 64)]
    assert errs[0] < 0.01
    for a, b in zip(errs, errs[1:]):
        assert 3.5 < a / b < 4.5
    assert abs(poisson_error(16, CG) - errs[0]) < 1e-9


def vector_problem_error(n):
    lam, mu = 2.0, 1.0
    x, y = sympy.symbols("x y")
    u = sympy.Matrix([sympy.sin(sympy.pi * x) * sympy.sin(sympy.pi * y), x * (1 - x) * y * (1 - y)])
    grad = u.jacobian([x, y])
    eps = (grad + grad.T) / 2
    sigma = lam * eps.trace() * sympy.eye(2) + 2 * mu * eps
    g = [-(sympy.diff(sigma[i, 0], x) + sympy.diff(sigma[i, 1], y)) for i in range(2)]
    g_fn = sympy.lambdify((x, y), g, "numpy")
    u_fn = sympy.lambdify((x, y), list(u), "numpy")
    mesh = build_macro_mesh(1.0, n)
    K = fem.assemble_elasticity_operator(mesh, {Phase.MATRIX: IsotropicElasticTensor(lam, mu)})
    qp = fem.quadrature_points(mesh, 3)
    gq = np.stack([np.broadcast_to(c, qp.shape[:2]) for c in g_fn(qp[..., 0], qp[..., 1])], -1)
    system = fem.apply_constraints(K, fem.source_load(mesh, gq, 3), Dirichlet(mesh.boundary_nodes),
                                   mesh=mesh, ncomp=2)
    field = FeField.from_flat(mesh, fem.solve_reduced(system), 2)
    return l2_error(field, lambda a, b: tuple(np.broadcast_to(c, a.shape) for c in u_fn(a, b)))


def test_elasticity_manufactured_convergence():
    errs = [vector_problem_error(n) for n in (8, 16, 32)]
    for a, b in zip(errs, errs[1:]):
        assert 3.5 < a / b < 4.5


# --- norms -------------------------------------------------------------------

def test_norms_of_simple_fields():
    mesh = unit_mesh(8)
    x = mesh.node_coordinates
    assert np.isclose(fem.l2_norm(FeField(mesh, np.full(mesh.num_nodes, -2.5))), 2.5)
    assert np.isclose(fem.h1_seminorm(FeField(mesh, x[:, 0])), 1.0)
    mesh32 = unit_mesh(32)
    x = mesh32.node_coordinates
    assert abs(fem.l2_norm(FeField(mesh32, x[:, 0] * x[:, 1]), 3) - 1 / 3) < 1e-4


def test_gradient_pairing_matches_operator(rng):
    mesh = build_unit_cell_mesh(UnitCellGeometry.disk(0.25), 8)
    a = {Phase.MATRIX: np.array([[2.0, 0.3], [0.3, 1.0]]), Phase.INCLUSION: 4.0 * np.eye(2)}
    K = fem.assemble_scalar_operator(mesh, a)
    u, v = rng.normal(size=(2, mesh.num_nodes))
    a_e = fem.per_element(mesh, {p: fem.as_spd(m) for p, m in a.items()}, (2, 2))
    pairing = fem.integrate_gradient_pairing(FeField(mesh, u), FeField(mesh, v), a_e)
    assert np.isclose(pairing, u @ K @ v, rtol=1e-12)


def test_field_arithmetic_checks_mesh():
    a = FeField(unit_mesh(4), np.zeros(25))
    with pytest.raises(MeshMismatch):
        a + FeField(unit_mesh(5), np.zeros(36))
    with pytest.raises(ValueError):
        FeField(unit_mesh(4), np.full(25, np.nan))


def test_point_evaluation_reproduces_bilinear_field(rng):
    mesh = build_macro_mesh(2.0, 6)
    x = mesh.node_coordinates
    field = FeField(mesh, 1 + 2 * x[:, 0] - x[:, 1] + 0.5 * x[:, 0] * x[:, 1])
    pts = rng.uniform(0, 2, size=(50, 2))
    exact = 1 + 2 * pts[:, 0] - pts[:, 1] + 0.5 * pts[:, 0] * pts[:, 1]
    np.testing.assert_allclose(fem.evaluate(field, pts)[:, 0], exact, atol=1e-12)
    grad = fem.evaluate_gradient(field, pts)[:, 0, :]
    np.testing.assert_allclose(grad[:, 0], 2 + 0.5 * pts[:, 1], atol=1e-12)
    np.testing.assert_allclose(grad[:, 1], -1 + 0.5 * pts[:, 0], atol=1e-12)
