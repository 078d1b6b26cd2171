"""``ncvem`` command line.

Exit codes: 0 success, 1 invalid input (arguments, mesh files, bad meshes),
2 numerical failure (solver breakdown, failed verification).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    compute_errors,
    get_problem,
    patch_test_on_mesh,
    polynomial_basis,
    random_polynomial,
    run_convergence,
    solve_problem,
)
from .assembly import projection_coefficients
from .element import STABILIZATIONS, build_local_element, check_element
from .generators import MESH_KINDS, generate_mesh, kind_dimension
from .mesh import check_regularity, mesh_to_dict, read_mesh
from .mfd import build_pi_perp, lemma_part_i, lemma_part_ii, mfd_stabilization, random_spd, verify_rel1

log = logging.getLogger("ncvem")

MAX_ORDER = {2: 4, 3: 3}
PATCH_TOL = 1e-9
MFD_TOL = 1e-12


class ValidationError(Exception):
    """Bad user input; maps to exit code 1."""


class NumericalFailure(Exception):
    """A computation finished but failed its check; maps to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    command: str
    k: int | None
    stabilization: str
    problem: str | None
    seed: int
    threads: int
    allow_high_order: bool


# -- helpers ------------------------------------------------------------------


def _configure_logging() -> None:
    level = os.environ.get("NCVEM_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ValidationError(f"NCVEM_LOG must be one of {', '.join(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _resolution_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if len(values) < 3 or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("need at least 3 positive resolutions")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise argparse.ArgumentTypeError("resolutions must be strictly increasing")
    return values


def _check_order(k: int, dim: int, allow_high: bool) -> None:
    if k < 1:
        raise ValidationError("order must be ≥ 1")
    if k > MAX_ORDER[dim] and not allow_high:
        raise ValidationError(f"order {k} above the default cap {MAX_ORDER[dim]} for {dim}D; pass --allow-high-order")


def _writable(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    parent = p.parent if str(p.parent) else Path(".")
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise ValidationError(f"output directory {parent} is not writable")
    return p


def _mesh_from_args(args):
    if args.mesh is not None:
        return read_mesh(args.mesh)
    if args.kind is None:
        raise ValidationError("give either --mesh FILE or --kind KIND")
    return generate_mesh(args.kind, args.res, args.seed)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def _emit(args, payload: dict, text: str) -> None:
    sys.stdout.write(_dump(payload) if args.json else text + "\n")


def _config(args) -> RunConfig:
    return RunConfig(
        args.command,
        getattr(args, "k", None),
        getattr(args, "stab", "vem-identity"),
        getattr(args, "problem", None),
        getattr(args, "seed", 0),
        getattr(args, "threads", 1),
        getattr(args, "allow_high_order", False),
    )


# -- subcommands --------------------------------------------------------------


def cmd_mesh_gen(args) -> int:
    out = _writable(args.out)
    mesh = generate_mesh(args.kind, args.res, args.seed)
    text = json.dumps(mesh_to_dict(mesh)) + "\n"
    if out is not None:
        out.write_text(text)
    summary = {"kind": args.kind, "resolution": args.res, "seed": args.seed, "dimension": mesh.dimension,
               "cells": mesh.n_cells, "faces": mesh.n_faces, "vertices": len(mesh.vertices), "out": args.out}
    if out is None and not args.json:
        sys.stdout.write(text)
    else:
        _emit(args, summary, f"{args.kind}: {mesh.n_cells} cells, {mesh.n_faces} faces -> {args.out}")
    return 0


def cmd_mesh_check(args) -> int:
    mesh = _mesh_from_args(args)
    report = check_regularity(mesh, args.rho_min)
    payload = report.to_dict()
    worst = min(report.cells, key=lambda c: c.star_rho)
    text = (f"{'PASS' if report.passed else 'FAIL'}: {mesh.n_cells} cells, "
            f"min star rho {worst.star_rho:.4f} (cell {worst.cell}), "
            f"min edge ratio {payload['min_edge_ratio']:.4f}, rho_min {args.rho_min}")
    _emit(args, payload, text)
    return 0 if report.passed else 1


def cmd_solve(args) -> int:
    cfg = _config(args)
    out = _writable(args.out)
    mesh = _mesh_from_args(args)
    _check_order(args.k, mesh.dimension, cfg.allow_high_order)
    problem = get_problem(args.problem)
    if problem.dim != mesh.dimension:
        raise ValidationError(f"problem {problem.name!r} is {problem.dim}D but the mesh is {mesh.dimension}D")
    res = solve_problem(mesh, args.k, problem, args.stab, threads=args.threads, method=args.solver)
    err = compute_errors(res.system, res.dofmap, res.u, problem)
    payload = {
        "problem": problem.name,
        "k": args.k,
        "stabilization": args.stab,
        "solver": {"method": res.method, "iterations": res.iterations, "residual": res.residual,
                   "floor_limited": res.floor_limited},
        "energy_error": err.energy,
        "l2_error": err.l2,
        "dofmap": res.dofmap.describe(),
        "dofs": res.u.tolist(),
        "projection_coefficients": [c.tolist() for c in projection_coefficients(res.system, res.dofmap, res.u)],
    }
    if out is not None:
        out.write_text(_dump(payload))
    summary = {key: payload[key] for key in ("problem", "k", "stabilization", "solver", "energy_error", "l2_error")}
    summary["n_dofs"] = res.dofmap.size
    _emit(args, summary, f"{res.dofmap.size} dofs, energy error {err.energy:.6e}, L2 error {err.l2:.6e}")
    return 0


def _convergence_csv(report, timing: bool) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["h", "dofs", "energy_error", "l2_error", "cg_iters", "wall_ms"])
    for r in report.rows:
        writer.writerow([repr(r.h), r.dofs, repr(r.energy_error), repr(r.l2_error), r.cg_iters,
                         f"{r.wall_ms:.3f}" if timing else ""])
    return buf.getvalue()


def cmd_converge(args) -> int:
    cfg = _config(args)
    out = _writable(args.out)
    problem = get_problem(args.problem)
    dim = kind_dimension(args.kind)
    _check_order(args.k, dim, cfg.allow_high_order)
    report = run_convergence(problem, args.kind, args.k, args.res, args.stab, seed=args.seed,
                             threads=args.threads, method=args.solver)
    rates = report.rates_dict()
    if out is not None:
        out.write_text(_convergence_csv(report, args.timing))
        json_path = Path(args.rates_out) if args.rates_out else out.with_suffix(".json")
        json_path.write_text(_dump(rates))
    text = _convergence_csv(report, args.timing) + (
        f"energy rate {rates['energy_rate']:.3f} (expected {rates['expected_energy_rate']:.2f}), "
        f"L2 rate {rates['l2_rate']:.3f} (expected {rates['expected_l2_rate']:.2f})")
    _emit(args, rates, text)
    if report.error is not None:
        log.error("%s", report.error)
        return 2
    return 0


def cmd_patch_test(args) -> int:
    cfg = _config(args)
    mesh = _mesh_from_args(args)
    _check_order(args.k, mesh.dimension, cfg.allow_high_order)
    degree = args.k if args.degree is None else args.degree
    if not 0 <= degree <= args.k:
        raise ValidationError(f"polynomial degree must be between 0 and k = {args.k}")
    rng = np.random.default_rng(args.seed)
    polys = polynomial_basis(mesh.dimension, degree) if args.basis else [random_polynomial(mesh.dimension, degree, rng)]
    results = []
    for p in polys:
        err, scale, energy = patch_test_on_mesh(mesh, args.k, p, args.stab, args.threads)
        results.append({"polynomial": {",".join(map(str, s)): c for s, c in p.coefficients.items()},
                        "max_dof_error": err, "dof_scale": scale, "energy_error": energy})
    worst = max(r["max_dof_error"] / max(r["dof_scale"], 1.0) for r in results)
    passed = worst <= PATCH_TOL
    payload = {"k": args.k, "degree": degree, "tolerance": PATCH_TOL, "max_scaled_error": worst,
               "passed": passed, "cases": results}
    _emit(args, payload, f"{'PASS' if passed else 'FAIL'}: {len(results)} polynomial(s), max scaled DoF error {worst:.3e}")
    return 0 if passed else 2


def cmd_mfd_check(args) -> int:
    cfg = _config(args)
    mesh = _mesh_from_args(args)
    _check_order(args.k, mesh.dimension, cfg.allow_high_order)
    rng = np.random.default_rng(args.seed)
    cells = range(mesh.n_cells) if args.cells is None else args.cells
    rows = []
    for c in cells:
        if not 0 <= c < mesh.n_cells:
            raise ValidationError(f"cell {c} out of range")
        el = build_local_element(mesh.cell(c), args.k, args.stab)
        P = build_pi_perp(el.D)
        rel = verify_rel1(el.pi, P)
        part_i, part_ii = [], []
        for _ in range(args.trials):
            U = random_spd(el.layout.size, rng)
            part_i.append(lemma_part_i(mfd_stabilization(P, U), el.pi, float(np.linalg.norm(U))).residual)
            S = np.diag(rng.uniform(0.5, 2.0, el.layout.size))
            part_ii.append(lemma_part_ii(S, el.pi, P).residual)
        default = lemma_part_ii(el.S, el.pi, P)
        rows.append({"cell": c, "rel1": rel._asdict(), "part_i": max(part_i),
                     "part_ii": max(max(part_ii), default.residual), "part_ii_spd_input": default.spd_input})
    worst = max(max(r["rel1"].values()) for r in rows)
    worst = max(worst, max(r["part_i"] for r in rows), max(r["part_ii"] for r in rows))
    passed = worst <= MFD_TOL
    payload = {"k": args.k, "stabilization": args.stab, "trials": args.trials, "seed": args.seed,
               "tolerance": MFD_TOL, "max_residual": worst,
               "passed": passed, "cells": rows}
    _emit(args, payload, f"{'PASS' if passed else 'FAIL'}: {len(rows)} cell(s), max residual {worst:.3e}")
    return 0 if passed else 2


def _matrix_text(name: str, a: np.ndarray) -> str:
    a = np.atleast_2d(a)
    lines = [f"# {name} {a.shape[0]}x{a.shape[1]}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in a]
    return "\n".join(lines)


def cmd_element_dump(args) -> int:
    cfg = _config(args)
    mesh = _mesh_from_args(args)
    _check_order(args.k, mesh.dimension, cfg.allow_high_order)
    if not 0 <= args.cell < mesh.n_cells:
        raise ValidationError(f"cell {args.cell} out of range (mesh has {mesh.n_cells} cells)")
    el = build_local_element(mesh.cell(args.cell), args.k, args.stab)
    mats = {"D": el.D, "B": el.B, "G": el.G, "G_tilde": el.G_tilde, "pi_star": el.pi_star, "pi": el.pi,
            "S": el.S, "M0": el.M0, "M1": el.M1, "M": el.M}
    checks = check_element(el)
    if args.json:
        payload = {"cell": args.cell, "k": args.k, "stabilization": args.stab, "n_dofs": el.layout.size,
                   "cond_G": el.cond_G, "checks": checks, **{n: m.tolist() for n, m in mats.items()}}
        sys.stdout.write(_dump(payload))
    else:
        sys.stdout.write("\n".join(_matrix_text(n, m) for n, m in mats.items()) + "\n")
    return 0


# -- parser -------------------------------------------------------------------


def _add_mesh_source(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("mesh source")
    g.add_argument("--mesh", "--in", dest="mesh", help="mesh JSON file")
    g.add_argument("--kind", choices=MESH_KINDS, help="generator kind (when --mesh is not given)")
    g.add_argument("--res", type=_positive_int, default=4, help="generator resolution")
    g.add_argument("--seed", type=int, default=0)


def _add_common(p: argparse.ArgumentParser, order: bool = True) -> None:
    p.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    p.add_argument("--threads", type=_positive_int, default=1, help="element-level worker threads")
    if order:
        p.add_argument("--k", type=int, required=True, help="polynomial order")
        p.add_argument("--stab", choices=STABILIZATIONS, default="vem-identity")
        p.add_argument("--allow-high-order", action="store_true", help="lift the default order cap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncvem", description="Nonconforming virtual elements for the Poisson problem")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    mesh = sub.add_parser("mesh", help="generate or check meshes")
    msub = mesh.add_subparsers(dest="mesh_command", required=True)
    gen = msub.add_parser("gen", help="write a generated mesh as JSON")
    gen.add_argument("--kind", choices=MESH_KINDS, required=True)
    gen.add_argument("--res", type=_positive_int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", help="output file (stdout when omitted)")
    _add_common(gen, order=False)
    gen.set_defaults(func=cmd_mesh_gen)
    chk = msub.add_parser("check", help="star-shapedness and regularity report")
    _add_mesh_source(chk)
    chk.add_argument("--rho-min", "--rho", dest="rho_min", type=float, default=0.1, help="minimum admissible chunkiness")
    _add_common(chk, order=False)
    chk.set_defaults(func=cmd_mesh_check)

    solve = sub.add_parser("solve", help="solve a manufactured problem")
    _add_mesh_source(solve)
    solve.add_argument("--problem", required=True)
    solve.add_argument("--out", help="solution JSON")
    solve.add_argument("--solver", choices=("auto", "cg", "cholesky"), default="auto")
    _add_common(solve)
    solve.set_defaults(func=cmd_solve)

    conv = sub.add_parser("converge", help="convergence study over mesh resolutions")
    conv.add_argument("--problem", required=True)
    conv.add_argument("--kind", choices=MESH_KINDS, required=True)
    conv.add_argument("--res", type=_resolution_list, required=True, help="comma-separated, e.g. 4,8,16,32")
    conv.add_argument("--seed", type=int, default=0)
    conv.add_argument("--out", help="CSV report; rates go to the matching .json")
    conv.add_argument("--rates-out", help="override the rates JSON path")
    conv.add_argument("--solver", choices=("auto", "cg", "cholesky"), default="auto")
    conv.add_argument("--no-timing", dest="timing", action="store_false",
                      help="leave wall_ms empty so that reports are byte-reproducible")
    _add_common(conv)
    conv.set_defaults(func=cmd_converge)

    patch = sub.add_parser("patch-test", help="exactness on polynomials of degree <= k")
    _add_mesh_source(patch)
    patch.add_argument("--degree", type=int, help="polynomial degree (default k)")
    patch.add_argument("--basis", action="store_true", help="test every monomial instead of one random polynomial")
    _add_common(patch)
    patch.set_defaults(func=cmd_patch_test)

    mfd = sub.add_parser("mfd-check", help="VEM/MFD stabilisation equivalence residuals")
    _add_mesh_source(mfd)
    mfd.add_argument("--cells", type=int, nargs="+", help="cell ids (default: all)")
    mfd.add_argument("--trials", type=_positive_int, default=1, help="random SPD matrices per cell")
    _add_common(mfd)
    mfd.set_defaults(func=cmd_mfd_check)

    dump = sub.add_parser("element-dump", help="print the local matrices of one cell")
    _add_mesh_source(dump)
    dump.add_argument("--cell", type=int, default=0)
    _add_common(dump)
    dump.set_defaults(func=cmd_element_dump)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; those are validation failures here
        return 0 if exc.code == 0 else 1
    try:
        _configure_logging()
        return args.func(args)
    except (NumericalFailure, ArithmeticError, np.linalg.LinAlgError) as exc:
        # LinAlgError derives from ValueError, so this clause must come first
        sys.stderr.write(f"ncvem: numerical failure: {type(exc).__name__}: {exc}\n")
        return 2
    except (ValidationError, ValueError, KeyError, OSError) as exc:
        sys.stderr.write(f"ncvem: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
