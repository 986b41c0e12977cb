"""Steady incompressible Navier-Stokes by Newton's method.

The discrete residual is the Stokes residual plus the convective term
rho ((grad v) v) . w.  Equal-order P1/P1 uses continuous interior penalty
(CIP) stabilization on gradient jumps; its streamline weight |v.n|^2 is
taken from the previous iterate and is not differentiated.  The inflow can
be ramped through a sequence of continuation factors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import linalg
from .fem import cell_basis, eval_on_points
from .forms import batches, cell_degree, interior_basis, jump_dofs
from .linalg import SparseSystem, TripletBuffer
from .stokes import (
    FlowProblem,
    FlowSolution,
    ProblemError,
    assemble_operator,
    dirichlet_dofs,
    make_solution,
)

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    """Newton iteration diverged or ran out of iterations."""

    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class NsConfig:
    newton_tol: float = 1e-10
    max_newton_iters: int = 25
    continuation: tuple = (1.0,)
    alpha_i: float = 1e-3
    alpha_v: float = 1e-3
    alpha_p: float = 1.0
    convection: float = 1.0  # scales the convective term; 0 gives Stokes

    def __post_init__(self):
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be at least 1")
        steps = tuple(float(s) for s in self.continuation)
        if not steps or steps[-1] != 1.0 or any(b <= a for a, b in zip(steps, steps[1:])) or steps[0] <= 0:
            raise ValueError("continuation factors must be positive, strictly increasing and end at 1")
        object.__setattr__(self, "continuation", steps)
        if min(self.alpha_i, self.alpha_v, self.alpha_p) < 0:
            raise ValueError("CIP weights must be non-negative")

    def fingerprint(self) -> tuple:
        return ("ns", self.alpha_i, self.alpha_v, self.alpha_p, self.convection)


@dataclass(frozen=True)
class NewtonStep:
    scale: float
    iteration: int
    residual: float  # relative to the residual of the zero state


# -- stabilization ---------------------------------------------------------


def cip_stabilization(problem: FlowProblem, config: NsConfig, v_lag=None, degree: int = 2) -> TripletBuffer:
    """Gradient-jump penalties on interior facets for P1/P1.

    Each interior facet is visited once with h^2 replaced by the mean of
    the two neighbours' h_K^2.  ``v_lag`` (a velocity Field or None for
    zero) supplies |v.n|^2 in the alpha_i term.
    """
    if problem.element != "P1P1stab":
        raise ProblemError("CIP stabilization is defined for P1/P1 only")
    lay = problem.layout
    mesh = problem.mesh
    d = mesh.dim
    buf = TripletBuffer()
    h2_all = 0.5 * np.sum(mesh.h_cell[mesh.interior_cells] ** 2, axis=1)
    for sel in batches(len(mesh.interior_facets)):
        h2 = h2_all[sel]
        if config.alpha_i > 0 or config.alpha_v > 0:
            ib = interior_basis(lay.V, degree, sel)
            weight = np.full(ib.weights.shape, config.alpha_v)
            if config.alpha_i > 0 and v_lag is not None:
                u, _ = eval_on_points(v_lag, ib.cells[:, 0], ib.points)
                un = np.einsum("fqk,fk->fq", u, ib.normals)
                weight = weight + config.alpha_i * un**2
            jg = np.concatenate([ib.G[0], -ib.G[1]], axis=2)  # (nf, nq, 2nl, d)
            scal = np.einsum("fq,fqak,fqbk->fab", ib.weights * weight * h2[:, None], jg, jg)
            nf, na = scal.shape[:2]
            local = np.einsum("fab,ij->faibj", scal, np.eye(d)).reshape(nf, na * d, na * d)
            dofs = jump_dofs(lay.V, ib.cells, blocked=True)
            buf.add_local(dofs, dofs, local)
        if config.alpha_p > 0:
            ib = interior_basis(lay.Q, degree, sel)
            jg = np.concatenate([ib.G[0], -ib.G[1]], axis=2)
            local = config.alpha_p * np.einsum("fq,fqak,fqbk->fab", ib.weights * h2[:, None], jg, jg)
            dofs = lay.nv + jump_dofs(lay.Q, ib.cells, blocked=False)
            buf.add_local(dofs, dofs, local)
    return buf


# -- residual and Jacobian -------------------------------------------------


def convection_terms(problem: FlowProblem, v, factor: float = 1.0):
    """Residual vector and Jacobian of rho ((grad v) v) . w (velocity block)."""
    lay = problem.layout
    V = lay.V
    mesh = problem.mesh
    d = mesh.dim
    res = np.zeros(lay.size)
    buf = TripletBuffer()
    if factor == 0.0:
        return res, buf
    rho = problem.rho * factor
    deg = 3 * V.element.degree - 1
    for cells in batches(mesh.num_cells):
        phi, G, w, rule = cell_basis(V, max(deg, cell_degree(V)), cells)
        u, g = v.eval_ref(cells, rule.points)
        dofs = V.blocked(V.cell_dofs[cells])
        nl = phi.shape[1]
        r = rho * np.einsum("cq,qa,cqik,cqk->cai", w, phi, g, u)
        res[: lay.nv] += linalg.scatter_vector(dofs, r.reshape(len(cells), -1), lay.nv)
        adv = np.einsum("cqbk,cqk->cqb", G, u)
        J = rho * np.einsum("cq,qa,cqb,ij->caibj", w, phi, adv, np.eye(d))
        J += rho * np.einsum("cq,qa,cqij,qb->caibj", w, phi, g, phi)
        buf.add_local(dofs, dofs, J.reshape(len(cells), nl * d, nl * d))
    return res, buf


def _fields(problem: FlowProblem, U: np.ndarray):
    from .fem import Field

    lay = problem.layout
    return Field(lay.V, U[: lay.nv]), Field(lay.Q, U[lay.nv : lay.nv + lay.np])


def assemble_ns_residual_and_jacobian(problem: FlowProblem, U: np.ndarray, config: NsConfig, scale: float = 1.0,
                                      lagged: np.ndarray | None = None) -> tuple[np.ndarray, sp.csr_matrix]:
    """Residual R(U) and Jacobian dR/dU with strong Dirichlet rows replaced.

    Dirichlet rows read R_D = U_D - g_D.  ``lagged`` is the iterate used in
    the CIP streamline weight (defaults to U).
    """
    lay = problem.layout
    A, b = assemble_operator(problem, scale, stabilize=False)
    v, _ = _fields(problem, U)
    if problem.element == "P1P1stab":
        v_lag = v if lagged is None else _fields(problem, lagged)[0]
        S = cip_stabilization(problem, config, v_lag).tocsr((lay.size, lay.size))
        A = A + S
    c_res, c_buf = convection_terms(problem, v, config.convection)
    R = A @ U - b + c_res
    J = (A + c_buf.tocsr((lay.size, lay.size))).tocsr()
    dofs, vals = dirichlet_dofs(problem, scale)
    if dofs.size:
        R[dofs] = U[dofs] - vals
        keep = np.ones(lay.size)
        keep[dofs] = 0.0
        diag = np.zeros(lay.size)
        diag[dofs] = 1.0
        J = (sp.diags(keep) @ J + sp.diags(diag)).tocsr()
        J.eliminate_zeros()
    J.sort_indices()
    return R, J


def ns_system(problem: FlowProblem, U: np.ndarray, config: NsConfig, scale: float = 1.0) -> SparseSystem:
    """Newton system J dU = -R at the iterate U."""
    R, J = assemble_ns_residual_and_jacobian(problem, U, config, scale)
    return SparseSystem(J, -R)


def _initial_guess(problem: FlowProblem, config: NsConfig, scale: float) -> np.ndarray:
    """Stokes solve with the Navier-Stokes stabilization (zero streamline weight)."""
    lay = problem.layout
    zero = np.zeros(lay.size)
    stokes_cfg = NsConfig(config.newton_tol, config.max_newton_iters, config.continuation,
                          0.0, config.alpha_v, config.alpha_p, 0.0)
    if problem.element == "P2P1":
        from .stokes import assemble_stokes

        return linalg.solve(assemble_stokes(problem, scale))
    R, J = assemble_ns_residual_and_jacobian(problem, zero, stokes_cfg, scale)
    return linalg.solve(SparseSystem(J, -R))


def newton_solve(problem: FlowProblem, config: NsConfig | None = None, initial: np.ndarray | None = None) -> FlowSolution:
    """Steady Navier-Stokes solution by Newton's method with inflow continuation.

    The residual is reported relative to the residual of the zero state at
    full inflow.  The returned solution's ``info["newton_log"]`` lists the
    residual history.
    """
    config = config or NsConfig()
    problem.validate()
    lay = problem.layout
    history: list[NewtonStep] = []
    U = _initial_guess(problem, config, config.continuation[0]) if initial is None else np.array(initial, dtype=float)
    if U.shape != (lay.size,):
        raise ProblemError(f"initial guess has size {U.shape}, expected ({lay.size},)")
    ref, _ = assemble_ns_residual_and_jacobian(problem, np.zeros(lay.size), config, 1.0)
    ref_norm = np.linalg.norm(ref)
    if ref_norm == 0.0:
        ref_norm = 1.0  # homogeneous data: fall back to the absolute residual
    iterations = 0
    # the reference norm is dominated by Dirichlet rows, so a Stokes guess can
    # already pass the tolerance; take one real step whenever convection is on
    min_steps = 1 if config.convection != 0.0 else 0
    for scale in config.continuation:
        increases = 0
        R, J = assemble_ns_residual_and_jacobian(problem, U, config, scale)
        rel = np.linalg.norm(R) / ref_norm
        history.append(NewtonStep(scale, 0, rel))
        log.info("newton scale=%.3g it=0 residual=%.3e", scale, rel)
        k = 0
        while rel > config.newton_tol or k < min_steps:
            if k >= config.max_newton_iters:
                raise NewtonError(f"no convergence in {k} iterations at inflow scale {scale}", history)
            dU = linalg.solve(SparseSystem(J, -R))
            U = U + dU
            k += 1
            iterations += 1
            R, J = assemble_ns_residual_and_jacobian(problem, U, config, scale)
            prev, rel = rel, np.linalg.norm(R) / ref_norm
            history.append(NewtonStep(scale, k, rel))
            log.info("newton scale=%.3g it=%d residual=%.3e", scale, k, rel)
            if not np.isfinite(rel):
                raise NewtonError("residual is not finite", history)
            increases = increases + 1 if rel > prev else 0
            if increases >= 3:
                raise NewtonError("Newton iteration diverged (residual grew in 3 consecutive steps)", history)
    return make_solution(problem, U, ns_config=config, newton_log=history, newton_iterations=iterations,
                         inflow_scale=1.0)


__all__ = [
    "NsConfig",
    "NewtonError",
    "NewtonStep",
    "cip_stabilization",
    "convection_terms",
    "assemble_ns_residual_and_jacobian",
    "ns_system",
    "newton_solve",
]
