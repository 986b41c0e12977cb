"""Command-line interface: convergence studies, single solves, WSS export, meshes."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .harness import CASES, ELEMENTS, FORMATS, WSS_METHODS, CaseSpec, HarnessError
from .mesh import parse_tag_map, read_gmsh, write_gmsh
from .stokes import boundary_flux, mean_pressure
from .wss import lsa, wss_stats, write_csv, write_vtu
from .fem import l2_error


class CliError(Exception):
    """Usage error reported as JSON."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _levels(text: str) -> tuple:
    """'0-4' or '0,2,3' -> tuple of ints."""
    try:
        if "-" in text:
            lo, hi = text.split("-", 1)
            return tuple(range(int(lo), int(hi) + 1))
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid level list {text!r}") from None


def _formats(text: str) -> tuple:
    return tuple(t.strip().lower() for t in text.split(",") if t.strip())


def _methods(text: str) -> tuple:
    text = text.lower()
    return WSS_METHODS if text == "all" else tuple(t.strip() for t in text.split(",") if t.strip())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wssfem", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, levels_default="0-3"):
        sp.add_argument("--case", choices=CASES, required=True)
        sp.add_argument("--element", choices=sorted(ELEMENTS), default="p2p1")
        sp.add_argument("--levels", type=_levels, default=_levels(levels_default))
        sp.add_argument("--mesh", help="Gmsh 2.2 ASCII mesh to use instead of a generated level")
        sp.add_argument("--tags", help="physical tag map, e.g. '1=inlet,2=outlet,3=wall' or JSON")
        sp.add_argument("--beta", type=float, default=100.0)
        sp.add_argument("--gamma-p", type=float)
        sp.add_argument("--gamma-v", type=float)
        sp.add_argument("--alpha-i", type=float, default=1e-3)
        sp.add_argument("--alpha-v", type=float, default=1e-3)
        sp.add_argument("--alpha-p", type=float, default=1.0)
        sp.add_argument("--newton-tol", type=float, default=1e-10)
        sp.add_argument("--wss", type=_methods, default=WSS_METHODS, help="bflux,cg1,dg1,dg0 or all")
        sp.add_argument("--out", default=".")

    c = sub.add_parser("convergence", help="run a mesh-convergence study")
    common(c)
    c.add_argument("--format", type=_formats, default=("csv", "json"))
    c.add_argument("--workers", type=int, default=None)
    c.add_argument("--exclude-coarsest", action="store_true", help="fit rates without the coarsest level")

    s = sub.add_parser("solve", help="solve one level (or a mesh file) and print a summary")
    common(s, "0")
    s.add_argument("--format", type=_formats, default=("json",))

    w = sub.add_parser("wss", help="compute and export WSS fields")
    common(w, "0")
    w.add_argument("--format", type=_formats, default=("csv",))
    w.add_argument("--lsa-parent-mean", type=float, help="reference mean |tau| for the low shear area")

    m = sub.add_parser("mesh", help="generate or inspect a mesh")
    m.add_argument("--case", choices=CASES)
    m.add_argument("--levels", type=_levels, default=(0,))
    m.add_argument("--mesh")
    m.add_argument("--tags")
    m.add_argument("--out")
    m.add_argument("--format", type=_formats, default=("json",))
    return p


def _spec(args, **extra) -> CaseSpec:
    return CaseSpec(
        case=args.case, element=args.element, wss_methods=args.wss, levels=args.levels, beta=args.beta,
        gamma_p=args.gamma_p, gamma_v=args.gamma_v, alpha_i=args.alpha_i, alpha_v=args.alpha_v,
        alpha_p=args.alpha_p, newton_tol=args.newton_tol, out_dir=args.out, **extra,
    )


def _load_mesh(args, level: int):
    if args.mesh:
        tag_map = parse_tag_map(args.tags) if args.tags else None
        return read_gmsh(args.mesh, tag_map)
    if args.tags:
        raise CliError("--tags only applies together with --mesh")
    if not getattr(args, "case", None):
        raise CliError("either --case or --mesh is required")
    return harness.level_mesh(args.case, level)[0]


def _single_level(args) -> int:
    if len(args.levels) != 1:
        raise CliError("this command takes a single level")
    return args.levels[0]


def _check_formats(fmts, allowed):
    bad = [f for f in fmts if f not in allowed]
    if bad:
        raise CliError(f"unsupported format(s) {bad} for this command; allowed: {list(allowed)}")


def cmd_convergence(args) -> dict:
    if args.mesh:
        raise CliError("convergence runs use generated mesh levels; --mesh is for solve/wss/mesh")
    _check_formats(args.format, FORMATS)
    workers = args.workers if args.workers is not None else harness.default_workers()
    spec = _spec(args, workers=workers, exclude_coarsest=args.exclude_coarsest)
    report = harness.run_convergence(spec)
    files = []
    for fmt in args.format:
        files += [str(p) for p in harness.emit_report(report, fmt, args.out)]
    result = {
        "case": report.case,
        "element": report.element,
        "levels": [r.level for r in report.levels],
        "fit_levels": list(report.fit_levels),
        "rates": {k: v.rate for k, v in report.rates.items()},
        "files": files,
    }
    if report.incomplete:
        raise CliError(f"incomplete report ({report.error}); partial results in {files}")
    return result


def _solve(args):
    level = _single_level(args)
    spec = _spec(args)
    mesh = _load_mesh(args, level)
    problem = harness.build_problem(spec, mesh)
    return spec, mesh, harness.solve_case(spec, problem)


def cmd_solve(args) -> dict:
    _check_formats(args.format, ("json",))
    spec, mesh, sol = _solve(args)
    case = spec.analytic
    out = {
        "case": spec.case,
        "element": spec.element,
        "num_cells": mesh.num_cells,
        "h": float(mesh.h_cell.max()),
        "dofs_v": sol.problem.layout.nv,
        "dofs_p": sol.problem.layout.np,
        "err_v": l2_error(sol.v, case.velocity),
        "err_p": l2_error(sol.p, case.pressure),
        "mean_pressure": mean_pressure(sol),
        "net_boundary_flux": boundary_flux(sol),
    }
    if "newton_iterations" in sol.info:
        out["newton_iterations"] = sol.info["newton_iterations"]
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    (path / f"{spec.case}_{spec.element}_solve.json").write_text(json.dumps(out, indent=2) + "\n")
    return out


def cmd_wss(args) -> dict:
    _check_formats(args.format, ("csv", "vtu", "json"))
    spec, mesh, sol = _solve(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"case": spec.case, "element": spec.element, "methods": {}}
    for method in spec.wss_methods:
        f = harness.compute_wss(spec, sol, method)
        st = wss_stats(f)
        entry = {"max": st.max, "min": st.min, "avg": st.avg, "area": st.area}
        if args.lsa_parent_mean is not None:
            entry["lsa_percent"] = lsa(f, parent_mean=args.lsa_parent_mean)
        stem = out_dir / f"{spec.case}_{spec.element}_wss_{method}"
        files = []
        if "csv" in args.format:
            write_csv(f, f"{stem}.csv")
            files.append(f"{stem}.csv")
        if "vtu" in args.format:
            write_vtu(f, f"{stem}.vtu")
            files.append(f"{stem}.vtu")
        entry["files"] = files
        summary["methods"][method] = entry
    if "json" in args.format:
        (out_dir / f"{spec.case}_{spec.element}_wss.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_mesh(args) -> dict:
    _check_formats(args.format, ("json",))
    level = _single_level(args)
    mesh = _load_mesh(args, level)
    names = {v: k for k, v in mesh.tags.items()}
    regions = {}
    for tag in np.unique(mesh.boundary_markers):
        sel = mesh.boundary_markers == tag
        regions[names.get(int(tag), str(int(tag)))] = {
            "tag": int(tag), "facets": int(sel.sum()), "measure": float(mesh.boundary_areas[sel].sum())
        }
    out = {
        "dim": mesh.dim,
        "num_vertices": mesh.num_vertices,
        "num_cells": mesh.num_cells,
        "h_max": float(mesh.h_cell.max()),
        "h_min": float(mesh.h_cell.min()),
        "volume": float(mesh.cell_volumes.sum()),
        "regions": regions,
    }
    if args.out:
        path = Path(args.out)
        if path.suffix != ".msh":
            path.mkdir(parents=True, exist_ok=True)
            path = path / "mesh.msh"
        write_gmsh(mesh, path)
        out["written"] = str(path)
    return out


COMMANDS = {"convergence": cmd_convergence, "solve": cmd_solve, "wss": cmd_wss, "mesh": cmd_mesh}


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        result = COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error
        kind = "usage" if isinstance(exc, (CliError, HarnessError)) else type(exc).__name__
        print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
        return 2 if kind == "usage" else 1
    print(json.dumps(result, indent=2, default=_json_default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
