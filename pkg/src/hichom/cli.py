"""Command-line front end: ``hichom <command> --config <path> [--out <dir>] [--threads <k>]``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 selftest failure.
Failures also leave a machine-readable ``error.json`` in the output directory.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import cells, dns, effective, fem, io, macro, selftest, verification
from .config import Command, RunConfig, parse_config
from .errors import HichomError, ValidationError
from .geometry import build_macro_mesh, build_periodic_map, build_unit_cell_mesh
from .tensors import PAIRS

logger = logging.getLogger("hichom")

THREADS_ENV = "HICHOM_THREADS"
EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_SELFTEST = 0, 1, 2, 3

_PAIR_NAMES = ["11", "22", "12"]


def resolve_threads(flag: int | None, config_value: int) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValidationError(THREADS_ENV, f"not an integer: {env!r}") from None
        if value < 1:
            raise ValidationError(THREADS_ENV, "must be at least 1")
        return value
    return config_value


def _prepare_output(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ValidationError("output_dir", f"not writable: {exc}") from None
    return path


# ---------------------------------------------------------------- commands

def _solve_cell(cfg: RunConfig, threads: int):
    geometry = cfg.unit_cell_geometry()
    coeffs = cfg.phase_coefficients()
    solver = cfg.solver_config()
    mesh = build_unit_cell_mesh(geometry, cfg.cell_n)
    correctors = cells.solve_all(mesh, build_periodic_map(mesh), coeffs, solver, threads, geometry)
    return correctors, coeffs, solver


def _tensors(cfg: RunConfig, correctors, coeffs, solver):
    return effective.assemble_effective_tensors(correctors, coeffs, cfg.c_hom_mode, cfg.domain,
                                                solver.quadrature_order)


def _corrector_energies(correctors, coeffs, order: int) -> list[dict]:
    mesh = correctors.mesh
    a_e = coeffs.a_elements(mesh)
    rows = []
    for i, chi in enumerate(correctors.chi):
        g = fem.gradients_at_quadrature(chi, order)[:, :, 0, :]
        energy = fem.integrate(mesh, np.einsum("eqi,eij,eqj->eq", g, a_e, g), order)
        rows.append({"family": "chi", "index": str(i + 1), "h1_seminorm": fem.h1_seminorm(chi, order),
                     "energy": float(energy)})
    families = [("V", correctors.V, coeffs.B_elements(mesh)), ("p", correctors.p, coeffs.B_elements(mesh))]
    if correctors.W is not None:
        families.append(("W", correctors.W, coeffs.R_elements(mesh)))
    for name, fields, d_e in families:
        for k, f in enumerate(fields):
            strain = fem.strains_at_quadrature(f, order)[None]
            energy = effective.pairing(mesh, d_e, strain, strain, order)[0, 0]
            rows.append({"family": name, "index": _PAIR_NAMES[k],
                         "h1_seminorm": fem.h1_seminorm(f, order), "energy": float(energy)})
    return rows


def run_cell(cfg: RunConfig, out: Path, threads: int) -> int:
    correctors, coeffs, solver = _solve_cell(cfg, threads)
    fields = {f"chi{i + 1}": c for i, c in enumerate(correctors.chi)}
    for name in ("V", "p", "W"):
        family = getattr(correctors, name)
        if family is not None:
            fields.update({f"{name}{_PAIR_NAMES[k]}": f for k, f in enumerate(family)})
    io.write_vtk(out / "cell_correctors.vtk", correctors.mesh, fields, title="unit-cell correctors")
    rows = _corrector_energies(correctors, coeffs, solver.quadrature_order)
    io.write_csv(out / "cell_energies.csv", rows, ["family", "index", "h1_seminorm", "energy"])
    io.write_json(out / "cell_report.json", io.report("cell", cfg.echo(), {
        "mesh": {"n": correctors.mesh.n,
                 "inclusion_fraction": correctors.mesh.phase_fraction(1)},
        "correctors": rows}))
    return EXIT_OK


def _tensor_body(t: effective.EffectiveTensors) -> dict:
    return {
        "a_hom": t.a_hom, "B_hom": t.B_hom, "C_hom": t.C_hom, "R_hom": t.R_hom, "T_hom": t.T_hom,
        "C_hom_modes": t.C_hom_all, "R_hom_domains": t.R_hom_all, "T_hom_domains": t.T_hom_all,
        "c_hom_mode": t.c_hom_mode, "domain": t.domain, "checks": t.checks, "bounds": t.bounds,
    }


def run_tensors(cfg: RunConfig, out: Path, threads: int) -> int:
    correctors, coeffs, solver = _solve_cell(cfg, threads)
    t = _tensors(cfg, correctors, coeffs, solver)
    io.write_json(out / "tensors.json", io.report("tensors", cfg.echo(), _tensor_body(t)))
    rows = [{"tensor": "a_hom", "row": r, "col": c, "value": float(t.a_hom[r, c])}
            for r in range(2) for c in range(2)]
    for name in ("B_hom", "C_hom", "R_hom", "T_hom"):
        m = getattr(t, name)
        rows += [{"tensor": name, "row": _PAIR_NAMES[r], "col": _PAIR_NAMES[c], "value": float(m[r, c])}
                 for r in range(3) for c in range(3)]
    io.write_csv(out / "tensors.csv", rows, ["tensor", "row", "col", "value"])
    return EXIT_OK


def run_macro(cfg: RunConfig, out: Path, threads: int) -> int:
    correctors, coeffs, solver = _solve_cell(cfg, threads)
    t = _tensors(cfg, correctors, coeffs, solver)
    f, g, h = cfg.load_functions()
    sol = macro.solve_macro(macro.MacroProblem(build_macro_mesh(1.0, cfg.macro_n), t, f, g, h), solver)
    io.write_vtk(out / "macro.vtk", sol.phi0.mesh,
                 {"phi0": sol.phi0, "v0": sol.v0, "w0": sol.w0, "u0": sol.u0}, title="homogenized solution")
    order = verification.ERROR_QUADRATURE
    norms = {name: {"l2": fem.l2_norm(getattr(sol, name), order),
                    "h1": fem.h1_norm(getattr(sol, name), order)}
             for name in ("phi0", "v0", "w0", "u0")}
    io.write_csv(out / "macro_norms.csv",
                 [{"field": k, "l2": v["l2"], "h1": v["h1"]} for k, v in norms.items()],
                 ["field", "l2", "h1"])
    io.write_json(out / "macro_report.json", io.report("macro", cfg.echo(),
                                                       {"norms": norms, "tensors": _tensor_body(t)}))
    return EXIT_OK


def run_dns(cfg: RunConfig, out: Path, threads: int) -> int:
    coeffs, geometry, solver = cfg.phase_coefficients(), cfg.unit_cell_geometry(), cfg.solver_config()
    f, g, h = cfg.load_functions()
    setup = verification.StudySetup(coeffs, geometry, tuple(cfg.epsilons), cfg.cells_per_period,
                                    f=f, g=g, h=h, solver=solver, threads=threads)
    runs = verification.run_dns_ladder(setup)
    rows = []
    for eps, run in zip(cfg.epsilons, runs):
        k = dns.periods_per_side(eps)
        io.write_vtk(out / f"dns_k{k}.vtk", run.mesh,
                     {"phi": run.phi, "u": run.u, "v": run.v, "w": run.w}, title=f"fine-scale eps=1/{k}")
        row = {"epsilon": float(eps), "periods": k, "multiplier": run.problem.multiplier,
               "inclusion_strain_fraction": dns.inclusion_strain_fraction(run.u),
               "splitting_residual": verification.splitting_residual(run)}
        row.update(run.norms(verification.ERROR_QUADRATURE))
        rows.append(row)
    io.write_csv(out / "dns_summary.csv", rows)
    io.write_json(out / "dns_report.json", io.report("dns", cfg.echo(), {"runs": rows}))
    return EXIT_OK


def run_converge(cfg: RunConfig, out: Path, threads: int) -> int:
    f, g, h = cfg.load_functions()
    setup = verification.StudySetup(
        cfg.phase_coefficients(), cfg.unit_cell_geometry(), tuple(cfg.epsilons), cfg.cells_per_period,
        cfg.study_cell_n, f, g, h, cfg.solver_config(), cfg.c_hom_mode, cfg.domain, threads)
    report = verification.run_convergence_study(setup, cfg.echo())
    io.write_csv(out / "convergence.csv", report.rows())
    body = report.to_dict()
    body.pop("config")
    io.write_json(out / "convergence.json", io.report("convergence", cfg.echo(), body))
    return EXIT_OK


def run_selftest(cfg: RunConfig, out: Path, threads: int) -> int:
    result = selftest.run_selftest(threads)
    io.write_json(out / "selftest.json", io.report("selftest", cfg.echo(), result))
    for check in result["checks"]:
        print(f"criterion {check['criterion']:2d} {check['name']}: "
              f"{'PASS' if check['passed'] else 'FAIL'}")
    return EXIT_OK if result["passed"] else EXIT_SELFTEST


COMMANDS = {Command.CELL: run_cell, Command.TENSORS: run_tensors, Command.MACRO: run_macro,
            Command.DNS: run_dns, Command.CONVERGE: run_converge, Command.SELFTEST: run_selftest}


def run(cfg: RunConfig, out: Path | None = None, threads: int | None = None) -> int:
    out = _prepare_output(Path(out or cfg.output_dir))
    return COMMANDS[cfg.command](cfg, out, resolve_threads(threads, cfg.threads))


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hichom", description=(
        "Periodic homogenization of a weakly coupled electrostatic / high-contrast elastic system."))
    parser.add_argument("command", choices=[c.value for c in Command])
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", help="output directory (overrides output_dir in the config)")
    parser.add_argument("--threads", type=int, help=f"worker threads (overrides ${THREADS_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def _write_error(out: Path | None, exc: HichomError, code: int) -> None:
    body = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ValidationError):
        body["key"] = exc.key
    print(f"hichom: {type(exc).__name__}: {exc}", file=sys.stderr)
    if out is None:
        return
    try:
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "error.json", {"format": io.FORMAT_VERSION, "kind": "error", **body})
    except OSError:
        pass


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if args.out else None
    try:
        if args.threads is not None and args.threads < 1:
            raise ValidationError("threads", "must be at least 1")
        cfg = parse_config(args.config, args.command)
        out = out or Path(cfg.output_dir)
        return run(cfg, out, args.threads)
    except HichomError as exc:
        code = exc.exit_code
        _write_error(out, exc, code)
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
