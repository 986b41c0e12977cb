"""Vectorized element kernels shared by the flow solvers and WSS evaluation.

Local dof ordering for the mixed velocity/pressure pair on one cell is
velocity (node a, component i) at a * dim + i, followed by the pressure
basis functions.  Global ordering is velocity dofs (blocked per node),
then pressure dofs, then an optional scalar multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import (
    DofMap,
    basis_on_points,
    facet_quadrature,
    boundary_quadrature,
    cell_basis,
    tabulate_basis,
)
from .mesh import Mesh


@dataclass(frozen=True, eq=False)
class MixedLayout:
    V: DofMap
    Q: DofMap
    multiplier: bool = False

    @property
    def nv(self) -> int:
        return self.V.size

    @property
    def np(self) -> int:
        return self.Q.size

    @property
    def size(self) -> int:
        return self.nv + self.np + int(self.multiplier)

    @property
    def multiplier_dof(self) -> int:
        return self.nv + self.np

    def local_dofs(self, cells) -> np.ndarray:
        """Mixed local-to-global map (n, nloc_v * dim + nloc_p)."""
        return np.hstack([self.V.blocked(self.V.cell_dofs[cells]), self.nv + self.Q.cell_dofs[cells]])

    def split(self, U):
        return U[: self.nv], U[self.nv : self.nv + self.np]


def cell_degree(V: DofMap) -> int:
    return 2 * V.element.degree + 1


def viscous_local(V: DofMap, mu: float, stress: str, degree: int | None = None, cells=None) -> np.ndarray:
    """Local matrices of int T_visc(v) : grad w, shape (nc, nloc*d, nloc*d)."""
    _, G, w, _ = cell_basis(V, degree or cell_degree(V), cells)
    d = V.mesh.dim
    nl = G.shape[2]
    lap = mu * np.einsum("cq,cqak,cqbk->cba", w, G, G)
    L = np.einsum("cba,ij->cbjai", lap, np.eye(d))
    if stress == "symmetric_gradient":
        L = L + mu * np.einsum("cq,cqaj,cqbi->cbjai", w, G, G)
    elif stress != "full_gradient":
        raise ValueError(f"unknown stress model {stress!r}")
    return L.reshape(len(w), nl * d, nl * d)


def divergence_local(V: DofMap, Q: DofMap, degree: int | None = None, cells=None) -> np.ndarray:
    """Local matrices of int q div v, shape (nc, nloc_p, nloc_v*d)."""
    _, G, w, rule = cell_basis(V, degree or cell_degree(V), cells)
    psi, _ = tabulate_basis(Q.element, rule.points)
    D = np.einsum("cq,qp,cqai->cpai", w, psi, G)
    return D.reshape(D.shape[0], D.shape[1], -1)


def traction_operator(G: np.ndarray, psi: np.ndarray, n: np.ndarray, mu: float, stress: str) -> np.ndarray:
    """T(phi, psi) n for every mixed local basis function.

    G: velocity basis gradients (nf, nq, nl, d); psi: pressure basis values
    (nf, nq, np); n: normals (nf, d).  Returns (nf, nq, nl*d + np, d).
    """
    nf, nq, nl, d = G.shape
    gn = np.einsum("fqak,fk->fqa", G, n)
    Tv = mu * np.einsum("fqa,ij->fqaij", gn, np.eye(d))  # [a, i (trial comp), j (result comp)]
    if stress == "symmetric_gradient":
        Tv = Tv + mu * np.einsum("fqaj,fi->fqaij", G, n)
    Tp = -np.einsum("fqp,fj->fqpj", psi, n)
    return np.concatenate([Tv.reshape(nf, nq, nl * d, d), Tp], axis=2)


def value_operator(phi: np.ndarray, n_pressure: int, d: int) -> np.ndarray:
    """Vector value of every mixed local basis function (nf, nq, nl*d + np, d)."""
    nf, nq, nl = phi.shape
    Vv = np.einsum("fqa,ij->fqaij", phi, np.eye(d)).reshape(nf, nq, nl * d, d)
    return np.concatenate([Vv, np.zeros((nf, nq, n_pressure, d))], axis=2)


@dataclass(frozen=True)
class BoundaryBasis:
    facets: np.ndarray
    cells: np.ndarray
    normals: np.ndarray
    h: np.ndarray
    points: np.ndarray  # (nf, nq, d)
    weights: np.ndarray  # (nf, nq)
    bary: np.ndarray  # (nq, d) facet barycentric coordinates
    phi: np.ndarray  # velocity basis values (nf, nq, nl)
    G: np.ndarray  # velocity basis grads (nf, nq, nl, d)
    psi: np.ndarray  # pressure basis values (nf, nq, np)


def boundary_basis(layout: MixedLayout, facets: np.ndarray, degree: int = 4) -> BoundaryBasis:
    mesh = layout.V.mesh
    q = boundary_quadrature(mesh, facets, degree)
    cells = mesh.boundary_cells[facets]
    phi, G = basis_on_points(layout.V, cells, q.points)
    psi, _ = basis_on_points(layout.Q, cells, q.points)
    return BoundaryBasis(
        facets, cells, mesh.boundary_normals[facets], mesh.h_cell[cells], q.points, q.weights, q.bary, phi, G, psi
    )


@dataclass(frozen=True)
class InteriorBasis:
    """Basis data of both neighbours on every interior facet."""

    cells: np.ndarray  # (ni, 2)
    normals: np.ndarray  # (ni, d) out of cells[:, 0]
    h: np.ndarray  # (ni, 2) circumdiameters of the neighbours
    points: np.ndarray
    weights: np.ndarray
    G: tuple  # per side: (ni, nq, nl, d)
    phi: tuple


def interior_basis(dofmap: DofMap, degree: int, facets=None) -> InteriorBasis:
    """Basis data on interior facets (all of them, or the selected indices)."""
    mesh = dofmap.mesh
    sel = slice(None) if facets is None else facets
    q = facet_quadrature(mesh, mesh.interior_facets[sel], mesh.interior_areas[sel], degree)
    cells = mesh.interior_cells[sel]
    phi0, G0 = basis_on_points(dofmap, cells[:, 0], q.points)
    phi1, G1 = basis_on_points(dofmap, cells[:, 1], q.points)
    return InteriorBasis(
        cells, mesh.interior_normals[sel], mesh.h_cell[cells], q.points, q.weights, (G0, G1), (phi0, phi1)
    )


# facets or cells processed per batch, bounding the size of local matrix stacks
FACET_BATCH = 8000


def batches(num: int, size: int = FACET_BATCH):
    for start in range(0, num, size):
        yield np.arange(start, min(start + size, num))


def jump_dofs(dofmap: DofMap, cells: np.ndarray, blocked: bool) -> np.ndarray:
    """Concatenated local dofs of both neighbours (ni, 2*nloc[*d])."""
    c0 = dofmap.cell_dofs[cells[:, 0]]
    c1 = dofmap.cell_dofs[cells[:, 1]]
    if blocked:
        c0, c1 = dofmap.blocked(c0), dofmap.blocked(c1)
    return np.hstack([c0, c1])


def boundary_cell_values(field, facets: np.ndarray, points: np.ndarray):
    """Field value and gradient at points of boundary facets (from the adjacent cell)."""
    from .fem import eval_on_points

    mesh: Mesh = field.dofmap.mesh
    return eval_on_points(field, mesh.boundary_cells[facets], points)
