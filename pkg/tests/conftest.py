import numpy as np
import pytest

from hichom import cells, effective
from hichom.geometry import UnitCellGeometry, build_periodic_map, build_unit_cell_mesh
from hichom.selftest import disk_coefficients, laminate_coefficients


def solve_cell(geometry, coeffs, n):
    mesh = build_unit_cell_mesh(geometry, n)
    pmap = build_periodic_map(mesh)
    return cells.solve_all(mesh, pmap, coeffs, geometry=geometry)


@pytest.fixture(scope="session")
def disk_correctors():
    coeffs = disk_coefficients(C=(0.1, 0.1))
    return solve_cell(UnitCellGeometry.disk(0.25), coeffs, 64), coeffs


@pytest.fixture(scope="session")
def disk_tensors(disk_correctors):
    correctors, coeffs = disk_correctors
    return effective.assemble_effective_tensors(correctors, coeffs)


@pytest.fixture(scope="session")
def laminate_correctors():
    coeffs = laminate_coefficients()
    return solve_cell(UnitCellGeometry.laminate(0.5), coeffs, 64), coeffs


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
