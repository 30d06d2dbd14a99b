"""Bilinear (Q1) finite elements on structured meshes.

Operators are plain ``scipy.sparse`` CSR matrices. Vector fields use
node-major degree-of-freedom numbering ``dof = node * ncomp + component``.
Per-element coefficients are piecewise constant by phase.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import tensors
from .errors import (InconsistentConstraints, MeshMismatch, NonSpdCoefficient,
                     SingularSystem, SolverDiverged)
from .geometry import PeriodicDofMap, Phase, StructuredMesh
from .tensors import IsotropicElasticTensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    method: str = "direct"  # "direct" | "cg"
    tolerance: float = 1e-10
    max_iterations: int = 20000
    quadrature_order: int = 2

    def __post_init__(self):
        if self.method not in ("direct", "cg"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if not 0.0 < self.tolerance <= 1e-4:
            raise ValueError("tolerance must lie in (0, 1e-4]")
        if self.quadrature_order < 2:
            raise ValueError("quadrature_order must be >= 2")


@dataclass(frozen=True)
class FeField:
    """Nodal values of a Q1 field, shape ``(num_nodes, ncomp)``."""

    mesh: StructuredMesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.mesh.num_nodes:
            raise ValueError("values length must equal nodeCount x componentsPerNode")
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite entries")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def ncomp(self) -> int:
        return self.values.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @classmethod
    def from_flat(cls, mesh: StructuredMesh, flat: np.ndarray, ncomp: int) -> "FeField":
        return cls(mesh, np.asarray(flat).reshape(mesh.num_nodes, ncomp))

    def __add__(self, other: "FeField") -> "FeField":
        _same_mesh(self, other)
        return FeField(self.mesh, self.values + other.values)

    def __sub__(self, other: "FeField") -> "FeField":
        _same_mesh(self, other)
        return FeField(self.mesh, self.values - other.values)

    def scale(self, factor: float) -> "FeField":
        return FeField(self.mesh, self.values * factor)


def _same_mesh(a: FeField, b: FeField) -> None:
    if a.mesh is b.mesh:
        return
    same = (a.mesh.n == b.mesh.n and a.mesh.edge_length == b.mesh.edge_length
            and tuple(a.mesh.origin) == tuple(b.mesh.origin))
    if not same or a.ncomp != b.ncomp:
        raise MeshMismatch("fields live on different meshes")


# --- reference element -------------------------------------------------------

_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def shape_functions(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Q1 shape values ``(N, 4)`` and reference gradients ``(N, 4, 2)`` at points ``xi``."""
    xi = np.atleast_2d(xi)
    a = 1.0 + xi[:, None, 0] * _CORNERS[None, :, 0]
    b = 1.0 + xi[:, None, 1] * _CORNERS[None, :, 1]
    values = 0.25 * a * b
    grads = np.stack([0.25 * _CORNERS[None, :, 0] * b,
                      0.25 * _CORNERS[None, :, 1] * a], axis=-1)
    return values, grads


@dataclass(frozen=True)
class Q1Element:
    h: float
    order: int
    xi: np.ndarray = field(repr=False)
    N: np.ndarray = field(repr=False)        # (nq, 4)
    grad: np.ndarray = field(repr=False)     # (nq, 4, 2) physical
    weights: np.ndarray = field(repr=False)  # (nq,) including det J
    B: np.ndarray = field(repr=False)        # (nq, 3, 8) engineering strain


@lru_cache(maxsize=64)
def q1_element(h: float, order: int = 2) -> Q1Element:
    g, w = np.polynomial.legendre.leggauss(order)
    xi = np.array([[a, b] for b in g for a in g])
    wq = np.array([wa * wb for wb in w for wa in w]) * (h * h / 4.0)
    N, dN = shape_functions(xi)
    grad = dN * (2.0 / h)
    nq = len(wq)
    B = np.zeros((nq, 3, 8))
    B[:, 0, 0::2] = grad[:, :, 0]
    B[:, 1, 1::2] = grad[:, :, 1]
    B[:, 2, 0::2] = grad[:, :, 1]
    B[:, 2, 1::2] = grad[:, :, 0]
    return Q1Element(h, order, xi, N, grad, wq, B)


@lru_cache(maxsize=64)
def _scalar_base(h: float, order: int) -> np.ndarray:
    el = q1_element(h, order)
    return np.einsum("q,qak,qbl->klab", el.weights, el.grad, el.grad)


@lru_cache(maxsize=64)
def _elastic_base(h: float, order: int) -> np.ndarray:
    el = q1_element(h, order)
    return np.einsum("q,qpa,qrb->prab", el.weights, el.B, el.B)


def element_dofs(mesh: StructuredMesh, ncomp: int) -> np.ndarray:
    conn = mesh.elements
    if ncomp == 1:
        return conn
    return (conn[:, :, None] * ncomp + np.arange(ncomp)).reshape(conn.shape[0], -1)


def _assemble(mesh: StructuredMesh, ke: np.ndarray, ncomp: int) -> sp.csr_matrix:
    dofs = element_dofs(mesh, ncomp)
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1).ravel()
    cols = np.tile(dofs, (1, k)).ravel()
    ndof = mesh.num_nodes * ncomp
    return sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(ndof, ndof)).tocsr()


def _scatter(mesh: StructuredMesh, fe: np.ndarray, ncomp: int) -> np.ndarray:
    out = np.zeros(mesh.num_nodes * ncomp)
    np.add.at(out, element_dofs(mesh, ncomp).ravel(), fe.ravel())
    return out


# --- coefficients ------------------------------------------------------------

CoeffMap = Mapping[Phase, Union[float, np.ndarray]]


def as_spd(value) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        a = a * np.eye(2)
    if a.shape != (2, 2):
        raise NonSpdCoefficient(f"coefficient must be a scalar or 2x2 matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-14 * max(1.0, np.abs(a).max())):
        raise NonSpdCoefficient("coefficient matrix is not symmetric")
    if np.linalg.eigvalsh(a).min() <= 0:
        raise NonSpdCoefficient("coefficient matrix is not positive definite")
    return a


def per_element(mesh: StructuredMesh, mapping: Mapping[Phase, np.ndarray], shape) -> np.ndarray:
    """Stack phase-wise constants into a per-element array; missing phases contribute zero."""
    out = np.zeros((mesh.num_elements,) + tuple(shape))
    for phase, value in mapping.items():
        out[mesh.element_phase == phase] = value
    return out


def _voigt_of(tensor) -> np.ndarray:
    if isinstance(tensor, IsotropicElasticTensor):
        return tensor.validate().voigt()
    v = np.asarray(tensor, dtype=float)
    if v.shape != (3, 3):
        raise ValueError("elastic tensor must be isotropic or a 3x3 stored-form matrix")
    return v


# --- operators ---------------------------------------------------------------

def scalar_operator_from_elements(mesh: StructuredMesh, a_e: np.ndarray,
                                  order: int = 2) -> sp.csr_matrix:
    ke = np.einsum("ekl,klab->eab", a_e, _scalar_base(mesh.h, order))
    return _assemble(mesh, ke, 1)


def elasticity_operator_from_elements(mesh: StructuredMesh, d_e: np.ndarray,
                                      order: int = 2) -> sp.csr_matrix:
    ke = np.einsum("epr,prab->eab", d_e, _elastic_base(mesh.h, order))
    return _assemble(mesh, ke, 2)


def assemble_scalar_operator(mesh: StructuredMesh, coeff_per_phase: CoeffMap,
                             order: int = 2) -> sp.csr_matrix:
    """Stiffness matrix of ``int a grad(u) . grad(v)``."""
    coeffs = {p: as_spd(a) for p, a in coeff_per_phase.items()}
    return scalar_operator_from_elements(mesh, per_element(mesh, coeffs, (2, 2)), order)


def assemble_elasticity_operator(mesh: StructuredMesh, tensor_per_phase: Mapping,
                                 phase_scale: Mapping[Phase, float] | None = None,
                                 order: int = 2) -> sp.csr_matrix:
    """Stiffness matrix of ``int (s_p B_p) : D(u) : D(v)`` with per-phase multipliers ``s_p``."""
    phase_scale = phase_scale or {}
    mats = {}
    for phase, tensor in tensor_per_phase.items():
        s = float(phase_scale.get(phase, 1.0))
        if not s > 0:
            raise ValueError(f"phase scale must be positive, got {s}")
        mats[phase] = s * _voigt_of(tensor)
    return elasticity_operator_from_elements(mesh, per_element(mesh, mats, (3, 3)), order)


# --- load vectors ------------------------------------------------------------

def flux_load(mesh: StructuredMesh, flux: np.ndarray, order: int = 2) -> np.ndarray:
    """``int q . grad(v)`` for a flux sampled at quadrature points, shape ``(ne, nq, 2)``."""
    el = q1_element(mesh.h, order)
    return _scatter(mesh, np.einsum("q,qak,eqk->ea", el.weights, el.grad, flux), 1)


def stress_load(mesh: StructuredMesh, stress: np.ndarray, order: int = 2) -> np.ndarray:
    """``int sigma : D(v)`` for stored-form stresses at quadrature points, ``(ne, nq, 3)``."""
    el = q1_element(mesh.h, order)
    return _scatter(mesh, np.einsum("q,qpa,eqp->ea", el.weights, el.B, stress), 2)


def source_load(mesh: StructuredMesh, values: np.ndarray, order: int = 2) -> np.ndarray:
    """``int f . v`` for values at quadrature points, ``(ne, nq)`` or ``(ne, nq, ncomp)``."""
    el = q1_element(mesh.h, order)
    if values.ndim == 2:
        return _scatter(mesh, np.einsum("q,qa,eq->ea", el.weights, el.N, values), 1)
    ncomp = values.shape[2]
    fe = np.einsum("q,qa,eqc->eac", el.weights, el.N, values)
    return _scatter(mesh, fe.reshape(mesh.num_elements, -1), ncomp)


# --- field evaluation --------------------------------------------------------

def quadrature_points(mesh: StructuredMesh, order: int = 2) -> np.ndarray:
    el = q1_element(mesh.h, order)
    corner = mesh.node_coordinates[mesh.elements[:, 0]]
    local = (el.xi + 1.0) * (0.5 * mesh.h)
    return corner[:, None, :] + local[None, :, :]


def _element_values(f: FeField) -> np.ndarray:
    return f.values[f.mesh.elements]  # (ne, 4, ncomp)


def values_at_quadrature(f: FeField, order: int = 2) -> np.ndarray:
    el = q1_element(f.mesh.h, order)
    return np.einsum("qa,eac->eqc", el.N, _element_values(f))


def gradients_at_quadrature(f: FeField, order: int = 2) -> np.ndarray:
    """Gradients ``(ne, nq, ncomp, 2)``."""
    el = q1_element(f.mesh.h, order)
    return np.einsum("qak,eac->eqck", el.grad, _element_values(f))


def strains_at_quadrature(f: FeField, order: int = 2) -> np.ndarray:
    """Symmetric gradient of a vector field, stored form ``(ne, nq, 3)``."""
    g = gradients_at_quadrature(f, order)
    return np.stack([g[..., 0, 0], g[..., 1, 1], 0.5 * (g[..., 0, 1] + g[..., 1, 0])], axis=-1)


def integrate(mesh: StructuredMesh, values: np.ndarray, order: int = 2) -> np.ndarray:
    """Quadrature sum over the mesh of values sampled as ``(ne, nq, ...)``."""
    el = q1_element(mesh.h, order)
    return np.einsum("q,eq...->...", el.weights, values)


def l2_norm(f: FeField, order: int = 2) -> float:
    v = values_at_quadrature(f, order)
    return float(np.sqrt(integrate(f.mesh, np.sum(v * v, axis=-1), order)))


def h1_seminorm(f: FeField, order: int = 2) -> float:
    g = gradients_at_quadrature(f, order)
    return float(np.sqrt(integrate(f.mesh, np.sum(g * g, axis=(-2, -1)), order)))


def h1_norm(f: FeField, order: int = 2) -> float:
    return float(np.hypot(l2_norm(f, order), h1_seminorm(f, order)))


def mean(f: FeField, order: int = 2) -> np.ndarray:
    area = f.mesh.edge_length ** 2
    return integrate(f.mesh, values_at_quadrature(f, order), order) / area


def integrate_gradient_pairing(f: FeField, g: FeField, coeff_per_element: np.ndarray,
                               order: int = 2) -> float:
    """``int a grad(f) . grad(g)`` for scalar fields and per-element 2x2 coefficients."""
    _same_mesh(f, g)
    gf = gradients_at_quadrature(f, order)[:, :, 0, :]
    gg = gradients_at_quadrature(g, order)[:, :, 0, :]
    return float(integrate(f.mesh, np.einsum("ekl,eqk,eql->eq", coeff_per_element, gf, gg), order))


def interpolate(mesh: StructuredMesh, func: Callable, ncomp: int = 1) -> FeField:
    """Nodal interpolant of ``func(x1, x2)`` (returns an array or a sequence of components)."""
    x = mesh.node_coordinates
    v = func(x[:, 0], x[:, 1])
    if ncomp == 1:
        vals = np.broadcast_to(np.asarray(v, dtype=float), (mesh.num_nodes,))
        return FeField(mesh, vals.copy())
    comps = [np.broadcast_to(np.asarray(c, dtype=float), (mesh.num_nodes,)) for c in v]
    return FeField(mesh, np.column_stack(comps))


def locate(mesh: StructuredMesh, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Element index and reference coordinates of points inside the mesh."""
    p = (np.atleast_2d(points) - np.asarray(mesh.origin)) / mesh.h
    cell = np.clip(np.floor(p), 0, mesh.n - 1).astype(int)
    xi = 2.0 * (p - cell) - 1.0
    return cell[:, 1] * mesh.n + cell[:, 0], xi


def evaluate(f: FeField, points: np.ndarray) -> np.ndarray:
    """Field values at arbitrary points, shape ``(N, ncomp)``."""
    elem, xi = locate(f.mesh, points)
    N, _ = shape_functions(xi)
    return np.einsum("pa,pac->pc", N, f.values[f.mesh.elements[elem]])


def evaluate_gradient(f: FeField, points: np.ndarray) -> np.ndarray:
    """Field gradients at arbitrary points, shape ``(N, ncomp, 2)``."""
    elem, xi = locate(f.mesh, points)
    _, dN = shape_functions(xi)
    return np.einsum("pak,pac->pck", dN * (2.0 / f.mesh.h), f.values[f.mesh.elements[elem]])


# --- constraints -------------------------------------------------------------

@dataclass(frozen=True)
class Dirichlet:
    """Prescribed nodal values; ``values`` broadcast to ``(len(nodes), ncomp)``."""

    nodes: np.ndarray
    values: np.ndarray | float = 0.0


@dataclass(frozen=True)
class Periodic:
    """Periodic identification; ``pin`` removes the constant kernel, ``mean_zero`` shifts afterwards."""

    pmap: PeriodicDofMap
    pin: bool = True
    mean_zero: bool = True


@dataclass(frozen=True)
class PhaseFrozen:
    """Fix every node touching ``phase`` (``exclusive``: only nodes touching nothing else)."""

    phase: Phase
    value: float = 0.0
    exclusive: bool = True


ConstraintSpec = Union[Dirichlet, Periodic, PhaseFrozen]


@dataclass(frozen=True)
class ReducedSystem:
    """Constrained system ``u = P x + offset`` with ``op = P^T K P``."""

    op: sp.csr_matrix
    rhs: np.ndarray
    prolongation: sp.csr_matrix
    offset: np.ndarray
    mesh: StructuredMesh
    ncomp: int
    mean_zero: bool = False

    @property
    def dimension(self) -> int:
        return self.op.shape[0]

    def expand(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        u = self.prolongation @ x
        u = u + (self.offset if u.ndim == 1 else self.offset[:, None])
        if self.mean_zero:
            w = nodal_weights(self.mesh)
            if u.ndim == 1:
                u = u.reshape(-1, self.ncomp)
                u = (u - (w @ u) / w.sum()).ravel()
            else:
                k = u.shape[1]
                u3 = u.reshape(self.mesh.num_nodes, self.ncomp, k)
                u3 = u3 - np.einsum("n,nck->ck", w, u3)[None] / w.sum()
                u = u3.reshape(-1, k)
        return u


@lru_cache(maxsize=32)
def _nodal_weights(n: int, h: float) -> np.ndarray:
    w = np.full((n + 1, n + 1), h * h)
    w[0, :] *= 0.5
    w[-1, :] *= 0.5
    w[:, 0] *= 0.5
    w[:, -1] *= 0.5
    return w.ravel()


def nodal_weights(mesh: StructuredMesh) -> np.ndarray:
    """``int N_i`` for every node, so that ``w @ u`` integrates a Q1 field exactly."""
    return _nodal_weights(mesh.n, mesh.h)


def apply_constraints(op: sp.spmatrix, rhs: np.ndarray,
                      spec: ConstraintSpec | Sequence[ConstraintSpec], *,
                      mesh: StructuredMesh, ncomp: int = 1) -> ReducedSystem:
    specs = [spec] if isinstance(spec, (Dirichlet, Periodic, PhaseFrozen)) else list(spec)
    ndof = mesh.num_nodes * ncomp
    comp = np.arange(ncomp)
    master = np.arange(ndof)
    fixed = np.zeros(ndof, dtype=bool)
    value = np.zeros(ndof)
    periodic = [s for s in specs if isinstance(s, Periodic)]
    for s in periodic:
        master = (s.pmap.master_of[:, None] * ncomp + comp).ravel()
    for s in specs:
        if isinstance(s, Dirichlet):
            nodes = np.asarray(s.nodes, dtype=int)
            dofs = (nodes[:, None] * ncomp + comp).ravel()
            if np.any(master[dofs] != dofs):
                raise InconsistentConstraints("a node is both Dirichlet and periodic slave")
            fixed[dofs] = True
            value[dofs] = np.broadcast_to(np.asarray(s.values, dtype=float),
                                          (len(nodes), ncomp)).ravel()
        elif isinstance(s, PhaseFrozen):
            nodes = mesh.nodes_of_phase(s.phase, exclusive=s.exclusive)
            dofs = (nodes[:, None] * ncomp + comp).ravel()
            fixed[dofs] = True
            value[dofs] = s.value
    # a fixed image fixes its master and, through it, every other image
    fixed_master = np.zeros(ndof, dtype=bool)
    np.logical_or.at(fixed_master, master, fixed)
    fixed = fixed_master[master]
    value = np.where(fixed, _master_values(value, master), 0.0)
    if periodic and periodic[0].pin and not fixed.any():
        fixed[comp] = True  # node 0 is a master
        fixed = fixed[master]
    free_masters = np.flatnonzero(~fixed & (master == np.arange(ndof)))
    col = np.full(ndof, -1)
    col[free_masters] = np.arange(free_masters.size)
    rows = np.flatnonzero(~fixed)
    P = sp.csr_matrix((np.ones(rows.size), (rows, col[master[rows]])),
                      shape=(ndof, free_masters.size))
    op = sp.csr_matrix(op)
    r = np.asarray(rhs, dtype=float)
    lifted = r - (op @ value if r.ndim == 1 else (op @ value)[:, None])
    reduced = (P.T @ op @ P).tocsr()
    mean_zero = bool(periodic and periodic[0].mean_zero and periodic[0].pin
                     and not any(isinstance(s, (Dirichlet, PhaseFrozen)) for s in specs))
    return ReducedSystem(reduced, P.T @ lifted, P, value, mesh, ncomp, mean_zero)


def _master_values(value: np.ndarray, master: np.ndarray) -> np.ndarray:
    out = np.zeros_like(value)
    nz = np.flatnonzero(value)
    out[master[nz]] = value[nz]
    return out[master]


# --- linear solves -----------------------------------------------------------

def factorize(op: sp.spmatrix, cfg: SolverConfig = SolverConfig()) -> Callable[[np.ndarray], np.ndarray]:
    """Return ``solve(rhs)`` for one operator; ``rhs`` may hold several columns."""
    op = sp.csc_matrix(op)
    if op.shape[0] == 0:
        return lambda rhs: np.zeros_like(np.asarray(rhs, dtype=float))
    if cfg.method == "direct":
        try:
            lu = spla.splu(op)
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc

        def solve_direct(rhs):
            x = lu.solve(np.asarray(rhs, dtype=float))
            if not np.all(np.isfinite(x)):
                raise SingularSystem("factorization produced non-finite values")
            return x
        return solve_direct

    diag = op.diagonal()
    if np.any(diag <= 0):
        raise SingularSystem("non-positive diagonal entry")
    precond = sp.diags(1.0 / diag)

    def solve_cg(rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.ndim == 2:
            return np.column_stack([solve_cg(rhs[:, k]) for k in range(rhs.shape[1])])
        if not np.any(rhs):
            return np.zeros_like(rhs)
        x, info = spla.cg(op, rhs, rtol=cfg.tolerance, atol=0.0,
                          maxiter=cfg.max_iterations, M=precond)
        if info != 0:
            raise SolverDiverged(f"CG did not converge in {cfg.max_iterations} iterations")
        return x
    return solve_cg


def solve(op: sp.spmatrix, rhs: np.ndarray, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise ValueError("right-hand side has non-finite entries")
    return factorize(op, cfg)(rhs)


def solve_reduced(system: ReducedSystem, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    return system.expand(solve(system.op, system.rhs, cfg))


def relative_residual(op: sp.spmatrix, x: np.ndarray, rhs: np.ndarray) -> float:
    r = op @ x - rhs
    scale = np.linalg.norm(rhs)
    return float(np.linalg.norm(r) / scale) if scale > 0 else float(np.linalg.norm(r))
