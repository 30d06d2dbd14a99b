"""File emission: legacy VTK (ASCII), CSV with a header row, and JSON reports."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .config import FORMAT_VERSION
from .fem import FeField
from .geometry import StructuredMesh

VTK_QUAD = 9


def _fmt(x: float) -> str:
    return repr(float(x))


def write_vtk(path: str | Path, mesh: StructuredMesh, point_fields: Mapping[str, FeField] = (),
              cell_fields: Mapping[str, np.ndarray] | None = None, title: str = "hichom") -> Path:
    """Legacy VTK 2.0 unstructured grid of Q1 quads with point and cell data."""
    path = Path(path)
    point_fields = dict(point_fields)
    cell_fields = {"phase": mesh.element_phase.astype(int), **(cell_fields or {})}
    nodes, elems = mesh.node_coordinates, mesh.elements
    lines = ["# vtk DataFile Version 2.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {len(nodes)} double"]
    lines += [f"{_fmt(x)} {_fmt(y)} 0.0" for x, y in nodes]
    lines.append(f"CELLS {len(elems)} {5 * len(elems)}")
    lines += ["4 " + " ".join(str(int(i)) for i in e) for e in elems]
    lines.append(f"CELL_TYPES {len(elems)}")
    lines += [str(VTK_QUAD)] * len(elems)
    if point_fields:
        lines.append(f"POINT_DATA {len(nodes)}")
        for name, f in point_fields.items():
            if f.mesh.num_nodes != len(nodes):
                raise ValueError(f"field {name!r} does not live on this mesh")
            if f.ncomp == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [_fmt(v) for v in f.values[:, 0]]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [f"{_fmt(a)} {_fmt(b)} 0.0" for a, b in f.values[:, :2]]
    lines.append(f"CELL_DATA {len(elems)}")
    for name, values in cell_fields.items():
        v = np.asarray(values)
        kind = "int" if np.issubdtype(v.dtype, np.integer) else "double"
        lines += [f"SCALARS {name} {kind} 1", "LOOKUP_TABLE default"]
        lines += [str(int(x)) if kind == "int" else _fmt(x) for x in v]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_vtk_points(path: str | Path) -> np.ndarray:
    """Point coordinates of a legacy VTK file written by ``write_vtk``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    i = next(k for k, l in enumerate(lines) if l.startswith("POINTS"))
    n = int(lines[i].split()[1])
    return np.array([[float(t) for t in l.split()] for l in lines[i + 1:i + 1 + n]])


def write_csv(path: str | Path, rows: Iterable[Mapping[str, object]],
              columns: list[str] | None = None) -> Path:
    path = Path(path)
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (_fmt(v) if isinstance(v, (float, np.floating)) else v)
                             for k, v in row.items()})
    return path


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k.value if hasattr(k, "value") else k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if hasattr(obj, "value"):
        return obj.value
    return obj


def report(kind: str, config: Mapping, body: Mapping) -> dict:
    """Report envelope: format version, report kind, full configuration echo, payload."""
    return {"format": FORMAT_VERSION, "kind": kind, "config": _jsonable(config), **_jsonable(body)}


def write_json(path: str | Path, data: Mapping) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path
