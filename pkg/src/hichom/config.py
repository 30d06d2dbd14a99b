"""Run configuration: JSON parsing, validation, and conversion to solver objects.

Load functions are given as arithmetic expressions in ``x1`` and ``x2`` (for
example ``"sin(pi*x1)*x2"``); they are parsed into a restricted syntax tree and
evaluated with numpy, never with ``eval``.
"""
from __future__ import annotations

import ast
import enum
import json
import operator
from pathlib import Path
from typing import Annotated, Any, Callable, Literal, Union

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .cells import ElectrostrictionTensor, PhaseCoefficients
from .effective import CHomMode, Domain
from .errors import HichomError, ParseError, ValidationError
from .fem import SolverConfig
from .geometry import Phase, UnitCellGeometry
from .tensors import IsotropicElasticTensor

FORMAT_VERSION = "hichom-report/1"


class Command(str, enum.Enum):
    CELL = "cell"
    TENSORS = "tensors"
    MACRO = "macro"
    DNS = "dns"
    CONVERGE = "converge"
    SELFTEST = "selftest"


# ---------------------------------------------------------------- expressions

_BINARY = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_FUNCTIONS = {name: getattr(np, name) for name in
              ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "sinh", "cosh", "tanh")}
_CONSTANTS = {"pi": np.pi, "e": np.e}
_VARIABLES = ("x1", "x2")


def _check_node(node: ast.AST) -> None:
    if isinstance(node, ast.Expression):
        _check_node(node.body)
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ValueError(f"unsupported constant {node.value!r}")
    elif isinstance(node, ast.Name):
        if node.id not in _VARIABLES and node.id not in _CONSTANTS:
            raise ValueError(f"unknown name {node.id!r}")
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINARY:
            raise ValueError("unsupported operator")
        _check_node(node.left)
        _check_node(node.right)
    elif isinstance(node, ast.UnaryOp):
        if type(node.op) not in _UNARY:
            raise ValueError("unsupported operator")
        _check_node(node.operand)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ValueError("unsupported function call")
        if node.keywords or len(node.args) != 1:
            raise ValueError(f"{node.func.id} takes exactly one argument")
        _check_node(node.args[0])
    else:
        raise ValueError(f"unsupported syntax {type(node).__name__}")


def _evaluate(node: ast.AST, env: dict):
    if isinstance(node, ast.Expression):
        return _evaluate(node.body, env)
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id] if node.id in env else _CONSTANTS[node.id]
    if isinstance(node, ast.BinOp):
        return _BINARY[type(node.op)](_evaluate(node.left, env), _evaluate(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNARY[type(node.op)](_evaluate(node.operand, env))
    return _FUNCTIONS[node.func.id](_evaluate(node.args[0], env))


def compile_expression(text: str | float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Vectorized callable ``(x1, x2) -> array`` for an arithmetic expression."""
    tree = ast.parse(str(text).strip(), mode="eval")
    _check_node(tree)

    def func(x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        out = _evaluate(tree, {"x1": x1, "x2": x2})
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x1, x2).shape).copy()

    return func


Expression = Union[str, float]


def _validate_expression(v):
    try:
        compile_expression(v)
    except (SyntaxError, ValueError) as exc:
        raise ValueError(f"invalid expression {v!r}: {exc}") from None
    return v


# ---------------------------------------------------------------- schema

class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DiskGeometry(_Model):
    kind: Literal["disk"] = "disk"
    radius: float = 0.25

    @field_validator("radius")
    @classmethod
    def _radius(cls, v):
        if not 0.0 < v < 0.5:
            raise ValueError("radius must lie in (0, 0.5)")
        return v


class LaminateGeometry(_Model):
    kind: Literal["laminate"]
    layer_fraction: float = 0.5
    normal: Literal[0, 1] = 0

    @field_validator("layer_fraction")
    @classmethod
    def _fraction(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("layer_fraction must lie in (0, 1)")
        return v


class GridGeometry(_Model):
    kind: Literal["grid"]
    grid: list[list[bool]]

    @field_validator("grid")
    @classmethod
    def _grid(cls, v):
        if not v or not v[0] or any(len(row) != len(v[0]) for row in v):
            raise ValueError("grid must be a non-empty rectangular array")
        flat = [x for row in v for x in row]
        if all(flat) or not any(flat):
            raise ValueError("grid needs at least one inclusion and one matrix entry")
        return v


GeometrySpec = Annotated[Union[DiskGeometry, LaminateGeometry, GridGeometry],
                         Field(discriminator="kind")]


class Lame(_Model):
    lam: float = Field(alias="lambda")
    mu: float

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @model_validator(mode="after")
    def _elliptic(self):
        if not (self.mu > 0 and self.lam >= 0):
            raise ValueError("need mu > 0 and lambda >= 0")
        return self


class ElectrostrictionSpec(_Model):
    alpha: float = 0.0
    beta: float = 0.0


Conductivity = Union[float, list[list[float]]]


def _check_conductivity(v):
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        if not a > 0:
            raise ValueError("must be positive")
        return v
    if a.shape != (2, 2) or not np.allclose(a, a.T) or np.linalg.eigvalsh(a).min() <= 0:
        raise ValueError("must be a symmetric positive definite 2x2 matrix")
    return v


class ConductivityPair(_Model):
    matrix: Conductivity = 1.0
    inclusion: Conductivity = 10.0

    @field_validator("matrix", "inclusion")
    @classmethod
    def _spd(cls, v):
        return _check_conductivity(v)


class StiffnessPair(_Model):
    matrix: Lame = Lame(lam=1.0, mu=1.0)
    inclusion: Lame = Lame(lam=10.0, mu=10.0)


class ElectrostrictionPair(_Model):
    matrix: ElectrostrictionSpec = ElectrostrictionSpec(alpha=0.1, beta=0.1)
    inclusion: ElectrostrictionSpec = ElectrostrictionSpec(alpha=0.2, beta=0.2)


class Coefficients(_Model):
    a: ConductivityPair = ConductivityPair()
    B: StiffnessPair = StiffnessPair()
    R: Lame = Lame(lam=1.0, mu=1.0)
    C: ElectrostrictionPair = ElectrostrictionPair()


class Loads(_Model):
    f: Expression = "1"
    g: tuple[Expression, Expression] = ("1", "1")
    h: Expression = "x1"

    @field_validator("f", "h")
    @classmethod
    def _scalar(cls, v):
        return _validate_expression(v)

    @field_validator("g")
    @classmethod
    def _vector(cls, v):
        return tuple(_validate_expression(c) for c in v)


class Solver(_Model):
    method: Literal["direct", "cg"] = "direct"
    tolerance: float = Field(1e-10, gt=0, le=1e-4)
    max_iterations: int = Field(20000, ge=1)
    quadrature_order: int = Field(2, ge=2, le=4)


class RunConfig(_Model):
    command: Command
    geometry: GeometrySpec = DiskGeometry()
    coefficients: Coefficients = Coefficients()
    gamma: float = Field(1.0, gt=0)
    cell_n: int = Field(64, ge=4)
    macro_n: int = Field(32, ge=2)
    cells_per_period: int = Field(8, ge=4)
    study_cell_n: int | None = Field(None, ge=4)
    epsilons: list[float] = Field(default_factory=lambda: [0.5, 0.25, 0.125], min_length=1)
    loads: Loads = Loads()
    solver: Solver = Solver()
    c_hom_mode: CHomMode = CHomMode.WEAK_FORM
    domain: Domain = Domain.INCLUSION
    output_dir: str = "hichom-out"
    threads: int = Field(1, ge=1)

    @field_validator("command", mode="before")
    @classmethod
    def _lower(cls, v):
        return v.lower() if isinstance(v, str) else v

    # -- conversions -------------------------------------------------------
    def unit_cell_geometry(self) -> UnitCellGeometry:
        g = self.geometry
        if isinstance(g, DiskGeometry):
            return UnitCellGeometry.disk(g.radius)
        if isinstance(g, LaminateGeometry):
            return UnitCellGeometry.laminate(g.layer_fraction, g.normal)
        return UnitCellGeometry.indicator(g.grid)

    def phase_coefficients(self) -> PhaseCoefficients:
        c = self.coefficients
        return PhaseCoefficients(
            a={Phase.MATRIX: np.asarray(c.a.matrix, float), Phase.INCLUSION: np.asarray(c.a.inclusion, float)},
            B={Phase.MATRIX: IsotropicElasticTensor(c.B.matrix.lam, c.B.matrix.mu),
               Phase.INCLUSION: IsotropicElasticTensor(c.B.inclusion.lam, c.B.inclusion.mu)},
            R=IsotropicElasticTensor(c.R.lam, c.R.mu),
            C={Phase.MATRIX: ElectrostrictionTensor(c.C.matrix.alpha, c.C.matrix.beta),
               Phase.INCLUSION: ElectrostrictionTensor(c.C.inclusion.alpha, c.C.inclusion.beta)},
            gamma=self.gamma)

    def solver_config(self) -> SolverConfig:
        s = self.solver
        return SolverConfig(s.method, s.tolerance, s.max_iterations, s.quadrature_order)

    def load_functions(self) -> tuple[Callable, Callable, Callable]:
        f = compile_expression(self.loads.f)
        g1, g2 = (compile_expression(e) for e in self.loads.g)
        h = compile_expression(self.loads.h)
        return f, (lambda x1, x2: (g1(x1, x2), g2(x1, x2))), h

    def echo(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


def _key(loc: tuple) -> str:
    parts = [str(p) for p in loc]
    # drop the union tag pydantic inserts after "geometry"
    if len(parts) > 1 and parts[0] == "geometry" and parts[1] in ("disk", "laminate", "grid"):
        del parts[1]
    return ".".join(parts) if parts else "config"


def validate_config(data: Any, command: str | None = None) -> RunConfig:
    """Validate a decoded JSON document; ``command`` fills a missing ``command`` key."""
    if not isinstance(data, dict):
        raise ValidationError("config", "top level must be a JSON object")
    data = dict(data)
    if command is not None:
        given = data.setdefault("command", command)
        if isinstance(given, str) and given.lower() != command.lower():
            raise ValidationError("command", f"config says {given!r} but {command!r} was requested")
    try:
        cfg = RunConfig.model_validate(data)
        cfg.unit_cell_geometry()
        cfg.phase_coefficients()
        cfg.solver_config()
    except pydantic.ValidationError as exc:
        err = exc.errors()[0]
        message = err["msg"].removeprefix("Value error, ")
        raise ValidationError(_key(err["loc"]), message) from None
    except HichomError as exc:
        raise ValidationError("coefficients", str(exc)) from None
    return cfg


def parse_config(path: str | Path, command: str | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return validate_config(data, command)
