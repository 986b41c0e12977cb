"""Benchmark cases, mesh-level schedules, rate fitting and reports."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .analytic import PIPE_LENGTH, PIPE_RADIUS, AnalyticCase, get_case
from .fem import Field, l2_error
from .mesh import Mesh, generate_cylinder, generate_unit_square
from .navier_stokes import NsConfig, newton_solve
from .stokes import (
    FlowProblem,
    FlowSolution,
    NitscheConfig,
    StabilizationConfig,
    do_nothing,
    nitsche_dirichlet,
    solve_stokes,
    strong_dirichlet,
)
from .wss import (
    WssField,
    boundary_flux_wss,
    boundary_flux_wss_2d_per_side,
    project_wss,
    wss_l2_difference,
    wss_l2_error,
    wss_stats,
)

log = logging.getLogger(__name__)

CASES = ("stokes2d", "poiseuille3d", "ns_pipe")
ELEMENTS = {"p2p1": "P2P1", "p1p1": "P1P1stab"}
WSS_METHODS = ("bflux", "cg1", "dg1", "dg0")
WORKERS_ENV = "WSSFEM_WORKERS"

# pipe levels: n rings across the radius, 6n points around, 2n layers along
PIPE_LEVELS = (3, 4, 5, 6, 8, 10)

DEFAULT_STABILIZATION = {"stokes2d": (1e-2, 1e-2), "poiseuille3d": (1.0, 1e-3), "ns_pipe": (1.0, 1e-3)}


class HarnessError(ValueError):
    """Invalid case specification."""


class LevelError(RuntimeError):
    """A level failed; carries the level index."""

    def __init__(self, level: int, cause: Exception):
        super().__init__(f"level {level}: {type(cause).__name__}: {cause}")
        self.level = level
        self.cause = cause


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        raise HarnessError(f"{WORKERS_ENV} must be an integer, got {value!r}") from None


@dataclass(frozen=True)
class CaseSpec:
    case: str
    element: str = "p2p1"
    wss_methods: tuple = WSS_METHODS
    levels: tuple = (0, 1, 2, 3)
    beta: float = 100.0
    gamma_p: float | None = None
    gamma_v: float | None = None
    alpha_i: float = 1e-3
    alpha_v: float = 1e-3
    alpha_p: float = 1.0
    newton_tol: float = 1e-10
    continuation: tuple = (1.0,)
    exclude_coarsest: bool = False
    out_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.case not in CASES:
            raise HarnessError(f"unknown case {self.case!r}; expected one of {list(CASES)}")
        element = self.element.lower()
        if element not in ELEMENTS:
            raise HarnessError(f"unknown element {self.element!r}; expected one of {list(ELEMENTS)}")
        object.__setattr__(self, "element", element)
        methods = tuple(m.lower() for m in self.wss_methods)
        bad = [m for m in methods if m not in WSS_METHODS]
        if bad:
            raise HarnessError(f"unknown WSS method(s) {bad}; expected a subset of {list(WSS_METHODS)}")
        object.__setattr__(self, "wss_methods", methods)
        levels = tuple(int(k) for k in self.levels)
        if any(k < 0 for k in levels) or len(set(levels)) != len(levels):
            raise HarnessError("levels must be distinct non-negative integers")
        object.__setattr__(self, "levels", tuple(sorted(levels)))
        if self.workers < 1:
            raise HarnessError("workers must be at least 1")

    @property
    def element_pair(self) -> str:
        return ELEMENTS[self.element]

    @property
    def stabilization(self) -> StabilizationConfig | None:
        if self.element_pair != "P1P1stab":
            return None
        gp, gv = DEFAULT_STABILIZATION[self.case]
        return StabilizationConfig(
            gp if self.gamma_p is None else self.gamma_p, gv if self.gamma_v is None else self.gamma_v
        )

    @property
    def ns_config(self) -> NsConfig:
        return NsConfig(newton_tol=self.newton_tol, continuation=self.continuation,
                        alpha_i=self.alpha_i, alpha_v=self.alpha_v, alpha_p=self.alpha_p)

    @property
    def analytic(self) -> AnalyticCase:
        return get_case(self.case)


# -- meshes and problems ----------------------------------------------------


def level_mesh(case: str, level: int) -> tuple[Mesh, float]:
    """Mesh of a level and its target edge length."""
    if case == "stokes2d":
        n = 2 ** (3 + level)
        return generate_unit_square(n), 1.0 / n
    if level >= len(PIPE_LEVELS):
        raise HarnessError(f"pipe cases have levels 0..{len(PIPE_LEVELS) - 1}")
    nr = PIPE_LEVELS[level]
    mesh = generate_cylinder(PIPE_RADIUS, PIPE_LENGTH, 6 * nr, 2 * nr)
    return mesh, 2 * math.pi * PIPE_RADIUS / (6 * nr)


def build_problem(spec: CaseSpec, mesh: Mesh) -> FlowProblem:
    """Flow problem of the spec's case on ``mesh`` (strong BCs for P2/P1, Nitsche for P1/P1)."""
    case = spec.analytic
    dirichlet = strong_dirichlet if spec.element_pair == "P2P1" else nitsche_dirichlet
    if spec.case == "stokes2d":
        bcs = {side: dirichlet(case.velocity) for side in case.wall_regions}
    else:
        bcs = {"inlet": dirichlet(case.velocity), "outlet": do_nothing(tangential_zero=True), "wall": dirichlet()}
    return FlowProblem(
        mesh, spec.element_pair, case.stress, case.mu, bcs, rho=case.rho,
        stabilization=spec.stabilization, nitsche=NitscheConfig(spec.beta),
    )


def solve_case(spec: CaseSpec, problem: FlowProblem) -> FlowSolution:
    if spec.case == "ns_pipe":
        return newton_solve(problem, spec.ns_config)
    return solve_stokes(problem)


def compute_wss(spec: CaseSpec, solution: FlowSolution, method: str) -> WssField:
    problem = solution.problem
    walls = list(spec.analytic.wall_regions)
    if method == "bflux":
        if spec.case == "stokes2d":
            return boundary_flux_wss_2d_per_side(solution, tuple(walls))
        return boundary_flux_wss(solution, walls)
    return project_wss(solution.v, problem.mu, problem.stress, walls, method.upper(), split_regions=len(walls) > 1)


def exact_wss_fn(spec: CaseSpec, mesh: Mesh):
    case = spec.analytic
    return lambda x, n, tags: case.wss(x, n, tags, mesh.tags)


# -- a single level ------------------------------------------------------------


@dataclass
class LevelResult:
    level: int
    h: float  # max circumdiameter
    edge_length: float  # target edge length of the generator
    dofs_v: int
    dofs_p: int
    errors: dict  # quantity -> L2 error ("v", "p", "wss_<method>")
    wss_mean: dict  # method -> area-weighted mean |tau|
    extras: dict = field(default_factory=dict)
    seconds: float = 0.0


def run_level(spec: CaseSpec, level: int) -> LevelResult:
    t0 = time.perf_counter()
    mesh, edge = level_mesh(spec.case, level)
    problem = build_problem(spec, mesh)
    case = spec.analytic
    sol = solve_case(spec, problem)
    errors = {"v": l2_error(sol.v, case.velocity), "p": l2_error(sol.p, case.pressure)}
    exact = exact_wss_fn(spec, mesh)
    fields_by_method = {}
    means = {}
    for method in spec.wss_methods:
        f = compute_wss(spec, sol, method)
        fields_by_method[method] = f
        errors[f"wss_{method}"] = wss_l2_error(f, exact)
        means[method] = wss_stats(f).avg
    extras = {}
    if "bflux" in fields_by_method and "cg1" in fields_by_method and spec.case != "stokes2d":
        extras["bflux_cg1_rel_diff"] = wss_l2_difference(fields_by_method["bflux"], fields_by_method["cg1"])
    if spec.case == "ns_pipe":
        extras.update(_ns_extras(spec, problem, sol, means))
    return LevelResult(
        level, float(mesh.h_cell.max()), float(edge), problem.layout.nv, problem.layout.np,
        {k: float(v) for k, v in errors.items()}, {k: float(v) for k, v in means.items()}, extras,
        time.perf_counter() - t0,
    )


def _ns_extras(spec: CaseSpec, problem: FlowProblem, ns: FlowSolution, ns_means: dict) -> dict:
    """Comparison with the Stokes solution on the same mesh."""
    stokes = solve_stokes(problem)
    diff = Field(ns.v.dofmap, ns.v.coefficients - stokes.v.coefficients)
    out = {
        "newton_iterations": int(ns.info["newton_iterations"]),
        "newton_final_residual": float(ns.info["newton_log"][-1].residual),
        "ns_stokes_v_rel_diff": float(l2_error(diff) / l2_error(stokes.v)),
    }
    for method, mean in ns_means.items():
        ref = wss_stats(compute_wss(spec, stokes, method)).avg
        out[f"ns_stokes_wss_mean_rel_diff_{method}"] = float(abs(mean - ref) / ref)
    return out


# -- rates and reports --------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    rate: float  # least-squares slope of log e against log h
    last_pair: float


def fit_rate(h, e) -> RateFit:
    h = np.asarray(h, dtype=float)
    e = np.asarray(e, dtype=float)
    if h.shape != e.shape or h.size < 2:
        raise ValueError("rate fitting needs at least two (h, e) pairs")
    if np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be finite and positive for rate fitting")
    if np.any(h <= 0):
        raise ValueError("mesh sizes must be positive")
    lh, le = np.log(h), np.log(e)
    slope = np.polyfit(lh, le, 1)[0]
    last = (le[-1] - le[-2]) / (lh[-1] - lh[-2])
    return RateFit(float(slope), float(last))


@dataclass
class ConvergenceReport:
    case: str
    element: str
    wss_methods: tuple
    levels: list  # LevelResult
    rates: dict = field(default_factory=dict)  # quantity -> RateFit
    fit_levels: tuple = ()
    incomplete: bool = False
    error: str | None = None

    @property
    def quantities(self) -> list:
        return ["v", "p"] + [f"wss_{m}" for m in self.wss_methods]

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "element": self.element,
            "wss_methods": list(self.wss_methods),
            "levels": [asdict(r) for r in self.levels],
            "rates": {k: asdict(v) for k, v in self.rates.items()},
            "fit_levels": list(self.fit_levels),
            "incomplete": self.incomplete,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConvergenceReport":
        return cls(
            data["case"], data["element"], tuple(data["wss_methods"]),
            [LevelResult(**r) for r in data["levels"]],
            {k: RateFit(**v) for k, v in data["rates"].items()},
            tuple(data["fit_levels"]), data["incomplete"], data["error"],
        )

    def __eq__(self, other):
        return isinstance(other, ConvergenceReport) and self.to_dict() == other.to_dict()


def compute_rates(report: ConvergenceReport, exclude_coarsest: bool = False) -> None:
    levels = report.levels[1:] if exclude_coarsest and len(report.levels) > 2 else report.levels
    report.fit_levels = tuple(r.level for r in levels)
    report.rates = {}
    if len(levels) < 2:
        return
    h = [r.h for r in levels]
    for q in report.quantities:
        report.rates[q] = fit_rate(h, [r.errors[q] for r in levels])


def run_convergence(spec: CaseSpec) -> ConvergenceReport:
    """Run every level of ``spec`` (optionally in worker processes) and fit rates."""
    if len(spec.levels) < 2:
        raise HarnessError("a convergence study needs at least two levels")
    report = ConvergenceReport(spec.case, spec.element, spec.wss_methods, [])
    results: dict[int, LevelResult] = {}
    failure = None
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            futures = {k: pool.submit(run_level, spec, k) for k in spec.levels}
            for k in spec.levels:
                try:
                    results[k] = futures[k].result()
                except Exception as exc:  # noqa: BLE001 - recorded with level context
                    failure = failure or LevelError(k, exc)
    else:
        for k in spec.levels:
            try:
                results[k] = run_level(spec, k)
            except Exception as exc:  # noqa: BLE001
                failure = LevelError(k, exc)
                break
            log.info("level %d done in %.1fs", k, results[k].seconds)
    # ordered merge; stop at the first failed level
    for k in spec.levels:
        if k not in results:
            break
        report.levels.append(results[k])
    if failure is not None:
        report.incomplete = True
        report.error = str(failure)
    hs = [r.h for r in report.levels]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise HarnessError("mesh sizes must decrease strictly across levels")
    compute_rates(report, spec.exclude_coarsest)
    return report


# -- output ----------------------------------------------------------------------

FORMATS = ("csv", "json", "plotdata")


def report_rows(report: ConvergenceReport) -> tuple[list, list]:
    """Header and rows of the CSV form; timing stays in the last column."""
    qs = report.quantities
    header = ["level", "h", "edge_length", "dofs_v", "dofs_p"] + [f"err_{q}" for q in qs] + ["seconds"]
    rows = []
    for r in report.levels:
        rows.append([r.level, repr(r.h), repr(r.edge_length), r.dofs_v, r.dofs_p]
                    + [repr(r.errors[q]) for q in qs] + [f"{r.seconds:.3f}"])
    if report.rates:
        rows.append(["rate", "", "", "", ""] + [repr(report.rates[q].rate) for q in qs] + [""])
        rows.append(["rate_last_pair", "", "", "", ""] + [repr(report.rates[q].last_pair) for q in qs] + [""])
    return header, rows


def emit_report(report: ConvergenceReport, fmt: str, out_dir) -> list[Path]:
    """Write the report in one format; returns the files written."""
    if fmt not in FORMATS:
        raise HarnessError(f"unknown report format {fmt!r}; expected one of {list(FORMATS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{report.case}_{report.element}"
    if fmt == "csv":
        path = out / f"{stem}.csv"
        header, rows = report_rows(report)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        return [path]
    if fmt == "json":
        path = out / f"{stem}.json"
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        return [path]
    paths = []
    for method in report.wss_methods:
        path = out / f"{stem}_wss_{method}.dat"
        lines = ["# h error"] + [f"{r.h!r} {r.errors[f'wss_{method}']!r}" for r in report.levels]
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths


def load_report(path) -> ConvergenceReport:
    return ConvergenceReport.from_dict(json.loads(Path(path).read_text()))


def spec_from_overrides(base: CaseSpec, **overrides) -> CaseSpec:
    known = {f.name for f in fields(CaseSpec)}
    return replace(base, **{k: v for k, v in overrides.items() if k in known and v is not None})
