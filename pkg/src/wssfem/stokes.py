"""Stationary Stokes flow with Taylor-Hood P2/P1 or stabilized P1/P1 elements.

Weak form, for all test pairs (w, q)::

    int T(v, p) : grad w + int q div v + N_D + S = int f . w

with T = -p I + mu grad v (``full_gradient``) or -p I + 2 mu D(v)
(``symmetric_gradient``).  Dirichlet data is imposed either strongly (row
replacement with column lifting) or with the non-symmetric, penalized
Nitsche method.  The P1/P1 pair is stabilized with penalties on jumps of
the normal pressure gradient and of the velocity divergence across
interior facets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from . import linalg
from .fem import Field, cell_basis, function_space, tabulate_basis, physical_points
from .forms import (
    MixedLayout,
    boundary_basis,
    cell_degree,
    divergence_local,
    batches,
    interior_basis,
    jump_dofs,
    traction_operator,
    value_operator,
    viscous_local,
)
from .linalg import SparseSystem, TripletBuffer
from .mesh import Mesh

log = logging.getLogger(__name__)

ELEMENT_PAIRS = {"P2P1": ("P2", "P1"), "P1P1stab": ("P1", "P1")}
STRESS_MODELS = ("full_gradient", "symmetric_gradient")

VectorFn = Callable[[np.ndarray], np.ndarray]


class ProblemError(ValueError):
    """Invalid or inconsistent flow problem configuration."""


@dataclass(frozen=True)
class BoundaryCondition:
    """Velocity condition on one boundary region.

    kind is ``strong_dirichlet``, ``nitsche_dirichlet`` or ``do_nothing``;
    ``value`` maps (n, dim) points to (n, dim) velocities (None means zero).
    ``tangential_zero`` additionally pins the tangential velocity of a flat,
    axis-aligned do-nothing boundary.
    """

    kind: str
    value: VectorFn | None = None
    tangential_zero: bool = False

    def __post_init__(self):
        if self.kind not in ("strong_dirichlet", "nitsche_dirichlet", "do_nothing"):
            raise ProblemError(f"unknown boundary condition {self.kind!r}")
        if self.tangential_zero and self.kind != "do_nothing":
            raise ProblemError("tangential_zero can only be combined with do_nothing")

    @property
    def is_dirichlet(self) -> bool:
        return self.kind != "do_nothing"

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        if self.value is None:
            return np.zeros_like(x)
        return np.asarray(self.value(x), dtype=float).reshape(x.shape)


def strong_dirichlet(value: VectorFn | None = None) -> BoundaryCondition:
    return BoundaryCondition("strong_dirichlet", value)


def nitsche_dirichlet(value: VectorFn | None = None) -> BoundaryCondition:
    return BoundaryCondition("nitsche_dirichlet", value)


def do_nothing(tangential_zero: bool = False) -> BoundaryCondition:
    return BoundaryCondition("do_nothing", tangential_zero=tangential_zero)


@dataclass(frozen=True)
class StabilizationConfig:
    """Jump-penalty weights; s_rule is ``"viscosity"`` or a fixed exponent 1 or 2."""

    gamma_p: float = 1e-2
    gamma_v: float = 1e-2
    s_rule: str | int = "viscosity"

    def __post_init__(self):
        if self.gamma_p < 0 or self.gamma_v < 0:
            raise ProblemError("stabilization weights must be non-negative")
        if self.s_rule not in ("viscosity", 1, 2):
            raise ProblemError(f"s_rule must be 'viscosity', 1 or 2, got {self.s_rule!r}")

    def exponent(self, nu: float, h: np.ndarray) -> np.ndarray:
        if self.s_rule == "viscosity":
            return np.where(nu >= h, 2, 1)
        return np.full(np.shape(h), int(self.s_rule))


@dataclass(frozen=True)
class NitscheConfig:
    beta: float = 100.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ProblemError("Nitsche penalty beta must be positive")


@dataclass(frozen=True, eq=False)
class FlowProblem:
    mesh: Mesh
    element: str
    stress: str
    mu: float
    bcs: Mapping[str | int, BoundaryCondition]
    rho: float = 1.0
    body_force: VectorFn | None = None
    stabilization: StabilizationConfig | None = None
    nitsche: NitscheConfig = field(default_factory=NitscheConfig)

    def __post_init__(self):
        if self.element not in ELEMENT_PAIRS:
            raise ProblemError(f"unknown element pair {self.element!r}; expected one of {list(ELEMENT_PAIRS)}")
        if self.stress not in STRESS_MODELS:
            raise ProblemError(f"unknown stress model {self.stress!r}")
        if self.mu <= 0 or self.rho <= 0:
            raise ProblemError("viscosity and density must be positive")

    @property
    def nu(self) -> float:
        return self.mu / self.rho

    def validate(self) -> None:
        tags = {self.mesh.tag(k): bc for k, bc in self.bcs.items()}
        present = set(np.unique(self.mesh.boundary_markers).tolist())
        missing = present - set(tags)
        if missing:
            names = {v: k for k, v in self.mesh.tags.items()}
            raise ProblemError(f"boundary marker(s) without a boundary condition: {[names.get(t, t) for t in sorted(missing)]}")
        if self.element == "P1P1stab" and self.stabilization is None:
            raise ProblemError("P1P1stab requires a stabilization config")

    def bc_items(self):
        """(tag, condition) pairs in the order given."""
        return [(self.mesh.tag(k), bc) for k, bc in self.bcs.items()]

    @property
    def pure_dirichlet(self) -> bool:
        return all(bc.is_dirichlet for _, bc in self.bc_items())

    @cached_property
    def layout(self) -> MixedLayout:
        fv, fp = ELEMENT_PAIRS[self.element]
        return MixedLayout(
            function_space(self.mesh, fv, vector=True), function_space(self.mesh, fp), multiplier=self.pure_dirichlet
        )

    def fingerprint(self) -> tuple:
        stab = None if self.stabilization is None else (self.stabilization.gamma_p, self.stabilization.gamma_v, self.stabilization.s_rule)
        bcs = tuple((tag, bc.kind, bc.tangential_zero) for tag, bc in self.bc_items())
        return (self.element, self.stress, stab, bcs, self.nitsche.beta, self.mu, self.rho)


@dataclass(eq=False)
class FlowSolution:
    """Velocity and pressure of a converged solve plus its configuration."""

    v: Field
    p: Field
    problem: FlowProblem
    fingerprint: tuple
    ns_config: object | None = None  # NsConfig for Navier-Stokes solutions
    multiplier: float = 0.0
    info: dict = field(default_factory=dict)


# -- assembly -------------------------------------------------------------


def _cell_terms(problem: FlowProblem, buf: TripletBuffer) -> None:
    lay = problem.layout
    for cells in batches(problem.mesh.num_cells):
        vdofs = lay.V.blocked(lay.V.cell_dofs[cells])
        pdofs = lay.nv + lay.Q.cell_dofs[cells]
        K = viscous_local(lay.V, problem.mu, problem.stress, cells=cells)
        D = divergence_local(lay.V, lay.Q, cells=cells)
        buf.add_local(vdofs, vdofs, K)
        buf.add_local(vdofs, pdofs, -np.transpose(D, (0, 2, 1)))  # -int p div w
        buf.add_local(pdofs, vdofs, D)  # int q div v


def body_force_vector(problem: FlowProblem) -> np.ndarray:
    lay = problem.layout
    b = np.zeros(lay.size)
    if problem.body_force is None:
        return b
    mesh = problem.mesh
    phi, _, w, rule = cell_basis(lay.V, max(cell_degree(lay.V), 4))
    cells = np.arange(mesh.num_cells)
    x = physical_points(mesh, cells, rule.points)
    f = np.asarray(problem.body_force(x.reshape(-1, mesh.dim)), dtype=float).reshape(mesh.num_cells, -1, mesh.dim)
    local = np.einsum("cq,qa,cqi->cai", w, phi, f).reshape(mesh.num_cells, -1)
    b[: lay.nv] = linalg.scatter_vector(lay.V.blocked(lay.V.cell_dofs), local, lay.nv)
    return b


def nitsche_terms(problem: FlowProblem, marker, value: VectorFn | None, scale: float = 1.0, degree: int = 4):
    """Non-symmetric penalized Nitsche terms on one boundary region.

    Returns (buffer, rhs) over the mixed layout for::

        - int (T(v,p) n) . w + int (T(w,q) n) . (v - g) + beta mu / h int (v - g) . w
    """
    mesh = problem.mesh
    lay = problem.layout
    facets = mesh.facets_with(marker)
    buf = TripletBuffer()
    rhs = np.zeros(lay.size)
    if facets.size == 0:
        return buf, rhs
    bb = boundary_basis(lay, facets, degree)
    d = mesh.dim
    T = traction_operator(bb.G, bb.psi, bb.normals, problem.mu, problem.stress)
    Vop = value_operator(bb.phi, bb.psi.shape[2], d)
    w = bb.weights
    pen = problem.nitsche.beta * problem.mu / bb.h
    local = (
        -np.einsum("fq,fqbk,fqak->fba", w, Vop, T)
        + np.einsum("fq,fqbk,fqak->fba", w, T, Vop)
        + pen[:, None, None] * np.einsum("fq,fqbk,fqak->fba", w, Vop, Vop)
    )
    dofs = lay.local_dofs(bb.cells)
    buf.add_local(dofs, dofs, local)
    if value is not None and scale != 0.0:
        g = scale * np.asarray(value(bb.points.reshape(-1, d)), dtype=float).reshape(bb.points.shape)
        r = np.einsum("fq,fqbk,fqk->fb", w, T, g) + pen[:, None] * np.einsum("fq,fqbk,fqk->fb", w, Vop, g)
        rhs += linalg.scatter_vector(dofs, r, lay.size)
    return buf, rhs


def _facet_weights(stab_h: np.ndarray, exponent: np.ndarray) -> np.ndarray:
    # each interior facet visited once: mean of the two neighbours' h_K^(s+1)
    return 0.5 * np.sum(stab_h ** (exponent + 1), axis=1)


def bh_stabilization(problem: FlowProblem, degree: int = 2) -> TripletBuffer:
    """Pressure-gradient and divergence jump penalties on interior facets.

    j(p, q) = sum_F gamma_p hbar_F int [n.grad p][n.grad q] and
    jt(v, w) = sum_F gamma_v hbar_F int [div v][div w], with hbar_F the mean
    of h_K^(s+1) over the two cells sharing F.
    """
    cfg = problem.stabilization
    lay = problem.layout
    buf = TripletBuffer()
    if cfg is None:
        return buf
    mesh = problem.mesh
    s = cfg.exponent(problem.nu, mesh.h_cell)[mesh.interior_cells]
    hbar_all = _facet_weights(mesh.h_cell[mesh.interior_cells], s)

    for sel in batches(len(mesh.interior_facets)):
        hbar = hbar_all[sel]
        n = mesh.interior_normals[sel]
        if cfg.gamma_p > 0:
            ib = interior_basis(lay.Q, degree, sel)
            jp = np.concatenate(
                [np.einsum("fqak,fk->fqa", ib.G[0], n), -np.einsum("fqak,fk->fqa", ib.G[1], n)], axis=2
            )
            local = cfg.gamma_p * hbar[:, None, None] * np.einsum("fq,fqa,fqb->fba", ib.weights, jp, jp)
            dofs = lay.nv + jump_dofs(lay.Q, ib.cells, blocked=False)
            buf.add_local(dofs, dofs, local)
        if cfg.gamma_v > 0:
            ib = interior_basis(lay.V, degree, sel)
            nf, nq = ib.weights.shape
            jd = np.concatenate([ib.G[0].reshape(nf, nq, -1), -ib.G[1].reshape(nf, nq, -1)], axis=2)
            local = cfg.gamma_v * hbar[:, None, None] * np.einsum("fq,fqa,fqb->fba", ib.weights, jd, jd)
            dofs = jump_dofs(lay.V, ib.cells, blocked=True)
            buf.add_local(dofs, dofs, local)
    return buf


def _mean_constraint(problem: FlowProblem, buf: TripletBuffer) -> None:
    lay = problem.layout
    psi, _, w, _ = cell_basis(lay.Q, 2)
    local = np.einsum("cq,qa->ca", w, psi)
    dofs = lay.nv + lay.Q.cell_dofs
    m = lay.multiplier_dof
    buf.add(dofs, np.full(dofs.shape, m), local)
    buf.add(np.full(dofs.shape, m), dofs, local)


def assemble_operator(problem: FlowProblem, scale: float = 1.0, stabilize: bool = True):
    """Matrix and right-hand side before strong boundary conditions."""
    problem.validate()
    lay = problem.layout
    buf = TripletBuffer()
    _cell_terms(problem, buf)
    rhs = body_force_vector(problem)
    for tag, bc in problem.bc_items():
        if bc.kind == "nitsche_dirichlet":
            nb, nr = nitsche_terms(problem, tag, bc.value, scale)
            buf.merge(nb)
            rhs += nr
    if stabilize and problem.element == "P1P1stab":
        sb = bh_stabilization(problem)
        buf.merge(sb)
    if lay.multiplier:
        _mean_constraint(problem, buf)
    return buf.tocsr((lay.size, lay.size)), rhs


def dirichlet_dofs(problem: FlowProblem, scale: float = 1.0):
    """Strongly constrained velocity dofs and their values.

    Regions are applied in the order given, so a later region overrides
    shared nodes of an earlier one.
    """
    mesh = problem.mesh
    V = problem.layout.V
    d = mesh.dim
    values = {}
    for tag, bc in problem.bc_items():
        facets = mesh.facets_with(tag)
        if facets.size == 0:
            continue
        nodes = np.unique(V.facet_nodes(facets))
        if bc.kind == "strong_dirichlet":
            g = scale * bc.evaluate(V.node_coords[nodes])
            for comp in range(d):
                values.update(zip((nodes * d + comp).tolist(), g[:, comp].tolist()))
        elif bc.kind == "do_nothing" and bc.tangential_zero:
            normals = mesh.boundary_normals[facets]
            axis = int(np.argmax(np.abs(normals[0])))
            if not np.allclose(np.abs(normals[:, axis]), 1.0, atol=1e-10):
                raise ProblemError("tangential_zero needs a flat boundary with an axis-aligned normal")
            for comp in range(d):
                if comp != axis:
                    values.update(zip((nodes * d + comp).tolist(), [0.0] * len(nodes)))
    dofs = np.array(sorted(values), dtype=np.int64)
    return dofs, np.array([values[k] for k in dofs.tolist()])


def assemble_stokes(problem: FlowProblem, scale: float = 1.0) -> SparseSystem:
    A, b = assemble_operator(problem, scale)
    dofs, vals = dirichlet_dofs(problem, scale)
    if dofs.size:
        A, b = linalg.apply_dirichlet(A, b, dofs, vals)
    return SparseSystem(A, b)


def make_solution(problem: FlowProblem, U: np.ndarray, ns_config=None, **info) -> FlowSolution:
    lay = problem.layout
    v, p = lay.split(U)
    mult = float(U[lay.multiplier_dof]) if lay.multiplier else 0.0
    fp = problem.fingerprint() if ns_config is None else problem.fingerprint() + ns_config.fingerprint()
    return FlowSolution(Field(lay.V, v.copy()), Field(lay.Q, p.copy()), problem, fp, ns_config, mult, dict(info))


def solve_stokes(problem: FlowProblem, scale: float = 1.0, dump_matrix: str | None = None) -> FlowSolution:
    system = assemble_stokes(problem, scale)
    if dump_matrix:
        linalg.dump_matrix_market(system.matrix, dump_matrix)
    U = linalg.solve(system)
    sol = make_solution(problem, U, dofs_v=problem.layout.nv, dofs_p=problem.layout.np, inflow_scale=scale)
    log.info("stokes solve: %d unknowns", system.size)
    return sol


def mean_pressure(solution: FlowSolution) -> float:
    """int p dx over the domain."""
    lay = solution.problem.layout
    psi, _, w, _ = cell_basis(lay.Q, 2)
    return float(np.einsum("cq,qa,ca->", w, psi, solution.p.coefficients[lay.Q.cell_dofs]))


def boundary_flux(solution: FlowSolution, regions=None, degree: int = 4) -> float:
    """int v . n ds over the given regions (all boundary facets by default)."""
    mesh = solution.problem.mesh
    facets = np.arange(len(mesh.boundary_facets)) if regions is None else mesh.facets_with(regions)
    from .fem import boundary_quadrature, eval_on_points

    q = boundary_quadrature(mesh, facets, degree)
    u, _ = eval_on_points(solution.v, mesh.boundary_cells[facets], q.points)
    return float(np.einsum("fq,fqk,fk->", q.weights, u, mesh.boundary_normals[facets]))
