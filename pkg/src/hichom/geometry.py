"""Structured quadrilateral meshes of the unit cell and of the macro domain.

Nodes are numbered row-major, ``node = iy * (n + 1) + ix``; elements likewise,
``elem = iy * n + ix``, with local nodes ordered counter-clockwise from the
lower-left corner. Phase labels are assigned with the centroid rule.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidGeometry, MeshTooCoarse, NonUnitCell

MIN_CELLS = 4


class Phase(enum.IntEnum):
    MATRIX = 0
    INCLUSION = 1


class GeometryKind(str, enum.Enum):
    DISK = "disk"
    LAMINATE = "laminate"
    GRID = "grid"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class UnitCellGeometry:
    """Inclusion layout of the periodicity cell [0, 1]^2.

    ``DISK`` places a disk of the given radius at the cell centre. ``LAMINATE``
    fills ``layer_fraction`` of the cell with inclusion material as a slab
    ``y[normal] < layer_fraction`` (layers normal to the coordinate axis
    ``normal``, 0 or 1). ``GRID`` reads the inclusion indicator from a boolean
    array whose row ``r`` covers ``y2`` in ``[r/rows, (r+1)/rows)`` and whose
    column ``c`` covers ``y1`` in ``[c/cols, (c+1)/cols)``.
    """

    kind: GeometryKind
    radius: float = 0.0
    layer_fraction: float = 0.0
    normal: int = 0
    grid: np.ndarray | None = field(default=None, compare=False)
    allow_degenerate: bool = False  # single-phase grids, for tests only

    def __post_init__(self):
        if self.kind is GeometryKind.DISK:
            if not 0.0 < self.radius < 0.5:
                raise InvalidGeometry(f"radius must lie in (0, 0.5), got {self.radius}")
        elif self.kind is GeometryKind.LAMINATE:
            if not 0.0 < self.layer_fraction < 1.0:
                raise InvalidGeometry(
                    f"layer_fraction must lie in (0, 1), got {self.layer_fraction}")
            if self.normal not in (0, 1):
                raise InvalidGeometry(f"normal must be 0 or 1, got {self.normal}")
        elif self.kind is GeometryKind.GRID:
            if self.grid is None:
                raise InvalidGeometry("grid geometry needs an indicator array")
            g = np.array(self.grid, dtype=bool)
            if g.ndim != 2 or g.size == 0:
                raise InvalidGeometry("grid must be a non-empty 2-D array")
            if (g.all() or not g.any()) and not self.allow_degenerate:
                raise InvalidGeometry("grid needs at least one inclusion and one matrix entry")
            object.__setattr__(self, "grid", _frozen(g))
        else:  # pragma: no cover
            raise InvalidGeometry(f"unknown geometry kind {self.kind!r}")

    @classmethod
    def disk(cls, radius: float) -> "UnitCellGeometry":
        return cls(GeometryKind.DISK, radius=radius)

    @classmethod
    def laminate(cls, layer_fraction: float, normal: int = 0) -> "UnitCellGeometry":
        return cls(GeometryKind.LAMINATE, layer_fraction=layer_fraction, normal=normal)

    @classmethod
    def indicator(cls, grid, allow_degenerate: bool = False) -> "UnitCellGeometry":
        return cls(GeometryKind.GRID, grid=np.asarray(grid, dtype=bool),
                   allow_degenerate=allow_degenerate)

    def contains(self, y: np.ndarray) -> np.ndarray:
        """Boolean mask of points (shape ``(N, 2)``, in [0, 1)^2) lying in the inclusion."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.kind is GeometryKind.DISK:
            d = y - 0.5
            return np.einsum("ij,ij->i", d, d) < self.radius ** 2
        if self.kind is GeometryKind.LAMINATE:
            return y[:, self.normal] < self.layer_fraction
        rows, cols = self.grid.shape
        c = np.clip(np.floor(y[:, 0] * cols).astype(int), 0, cols - 1)
        r = np.clip(np.floor(y[:, 1] * rows).astype(int), 0, rows - 1)
        return self.grid[r, c]

    def exact_inclusion_fraction(self) -> float:
        if self.kind is GeometryKind.DISK:
            return float(np.pi * self.radius ** 2)
        if self.kind is GeometryKind.LAMINATE:
            return float(self.layer_fraction)
        return float(self.grid.mean())

    def to_dict(self) -> dict:
        if self.kind is GeometryKind.DISK:
            return {"kind": "disk", "radius": self.radius}
        if self.kind is GeometryKind.LAMINATE:
            return {"kind": "laminate", "layer_fraction": self.layer_fraction,
                    "normal": self.normal}
        return {"kind": "grid", "grid": self.grid.astype(int).tolist()}


@dataclass(frozen=True)
class StructuredMesh:
    """Uniform ``n x n`` grid of Q1 quadrilaterals over ``origin + [0, L]^2``."""

    n: int
    edge_length: float
    element_phase: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)
    dimension: int = 2

    def __post_init__(self):
        phase = np.asarray(self.element_phase, dtype=np.int8)
        if phase.shape != (self.n * self.n,):
            raise ValueError("element_phase length must equal the element count")
        object.__setattr__(self, "element_phase", _frozen(phase.copy()))

    @property
    def h(self) -> float:
        return self.edge_length / self.n

    spacing = h

    @property
    def num_nodes(self) -> int:
        return (self.n + 1) ** 2

    @property
    def num_elements(self) -> int:
        return self.n * self.n

    @property
    def is_unit_cell(self) -> bool:
        return self.edge_length == 1.0 and tuple(self.origin) == (0.0, 0.0)

    @cached_property
    def node_coordinates(self) -> np.ndarray:
        t = np.arange(self.n + 1) * self.h
        xx, yy = np.meshgrid(t + self.origin[0], t + self.origin[1])
        return _frozen(np.column_stack([xx.ravel(), yy.ravel()]))

    @cached_property
    def elements(self) -> np.ndarray:
        n = self.n
        iy, ix = np.divmod(np.arange(n * n), n)
        n0 = iy * (n + 1) + ix
        conn = np.column_stack([n0, n0 + 1, n0 + n + 2, n0 + n + 1])
        return _frozen(conn)

    @cached_property
    def element_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer grid position ``(ix, iy)`` of each element."""
        iy, ix = np.divmod(np.arange(self.n * self.n), self.n)
        return _frozen(ix), _frozen(iy)

    @cached_property
    def centroids(self) -> np.ndarray:
        ix, iy = self.element_index
        c = np.column_stack([(ix + 0.5) * self.h, (iy + 0.5) * self.h])
        return _frozen(c + np.asarray(self.origin))

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        n = self.n
        iy, ix = np.divmod(np.arange(self.num_nodes), n + 1)
        mask = (ix == 0) | (ix == n) | (iy == 0) | (iy == n)
        return _frozen(np.flatnonzero(mask))

    def element_areas(self) -> np.ndarray:
        return np.full(self.num_elements, self.h * self.h)

    def phase_fraction(self, phase: Phase = Phase.INCLUSION) -> float:
        areas = self.element_areas()
        return float(areas[self.element_phase == phase].sum() / areas.sum())

    def nodes_of_phase(self, phase: Phase, exclusive: bool = True) -> np.ndarray:
        """Nodes touching ``phase`` elements; with ``exclusive`` only those touching no other phase."""
        touches = np.zeros(self.num_nodes, dtype=bool)
        touches[self.elements[self.element_phase == phase].ravel()] = True
        if not exclusive:
            return np.flatnonzero(touches)
        other = np.zeros(self.num_nodes, dtype=bool)
        other[self.elements[self.element_phase != phase].ravel()] = True
        return np.flatnonzero(touches & ~other)

    def with_phases(self, element_phase: np.ndarray) -> "StructuredMesh":
        return StructuredMesh(self.n, self.edge_length, element_phase, self.origin)


@dataclass(frozen=True)
class PeriodicDofMap:
    """Opposite-face node identification on a unit-cell mesh.

    ``master_of[k]`` is the master node of node ``k`` (itself for masters);
    ``reduced_index[k]`` numbers the ``n^2`` periodic nodes.
    """

    master_of: np.ndarray
    reduced_index: np.ndarray
    interior_count: int

    @property
    def num_periodic_nodes(self) -> int:
        return int(self.reduced_index.max()) + 1

    @property
    def slaves(self) -> np.ndarray:
        return np.flatnonzero(self.master_of != np.arange(self.master_of.size))


def build_unit_cell_mesh(geometry: UnitCellGeometry, n: int) -> StructuredMesh:
    if n < MIN_CELLS:
        raise MeshTooCoarse(f"unit-cell mesh needs n >= {MIN_CELLS}, got {n}")
    mesh = StructuredMesh(n, 1.0, np.zeros(n * n, dtype=np.int8))
    inside = geometry.contains(mesh.centroids)
    return mesh.with_phases(np.where(inside, Phase.INCLUSION, Phase.MATRIX))


def build_macro_mesh(edge_length: float, n: int) -> StructuredMesh:
    if n < MIN_CELLS:
        raise MeshTooCoarse(f"macro mesh needs n >= {MIN_CELLS}, got {n}")
    if not edge_length > 0:
        raise InvalidGeometry(f"edge length must be positive, got {edge_length}")
    return StructuredMesh(n, float(edge_length), np.zeros(n * n, dtype=np.int8))


def build_periodic_map(mesh: StructuredMesh) -> PeriodicDofMap:
    if not mesh.is_unit_cell:
        raise NonUnitCell("periodic identification requires a mesh over [0, 1]^2")
    n = mesh.n
    iy, ix = np.divmod(np.arange(mesh.num_nodes), n + 1)
    mx, my = ix % n, iy % n
    master = my * (n + 1) + mx
    reduced = my * n + mx
    return PeriodicDofMap(_frozen(master), _frozen(reduced), (n - 1) ** 2)
