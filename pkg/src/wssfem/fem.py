"""Lagrange elements on simplices: quadrature, bases, dof maps and fields.

Reference simplex has vertices 0, e_1, ..., e_d; barycentric coordinates
are lambda_0 = 1 - sum(x) and lambda_i = x_i.  Vector-valued fields are
blocked per node: global dof = node * ncomp + component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from .mesh import Mesh

FAMILIES = ("P1", "P2", "DG0", "DG1")

# Local edge numbering used by P2.
LOCAL_EDGES = {
    1: np.array([[0, 1]]),
    2: np.array([[0, 1], [1, 2], [0, 2]]),
    3: np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]),
}


@dataclass(frozen=True)
class ElementKind:
    family: str
    ncomp: int = 1  # 1 for scalar, dim for vector

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown element family {self.family!r}")

    @property
    def degree(self) -> int:
        return {"P1": 1, "P2": 2, "DG0": 0, "DG1": 1}[self.family]

    def num_local(self, sdim: int) -> int:
        """Number of scalar basis functions on a simplex of dimension sdim."""
        if self.family == "DG0":
            return 1
        if self.family == "P2":
            return (sdim + 1) * (sdim + 2) // 2
        return sdim + 1


# -- quadrature -----------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, sdim) reference coordinates
    weights: np.ndarray  # (nq,), sum = reference measure
    degree: int

    @property
    def barycentric(self) -> np.ndarray:
        return np.column_stack([1.0 - self.points.sum(axis=1), self.points])


def _gauss_jacobi01(n: int, alpha: float):
    """n-point Gauss rule on [0, 1] for the weight (1 - x)**alpha."""
    t, w = roots_jacobi(n, alpha, 0.0)
    return (1.0 + t) / 2.0, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def quadrature(sdim: int, degree: int) -> QuadratureRule:
    """Collapsed-coordinate (Stroud conical product) rule exact to ``degree``."""
    n = max(1, math.ceil((degree + 1) / 2))
    if sdim == 0:
        return QuadratureRule(np.zeros((1, 0)), np.ones(1), degree)
    if sdim == 1:
        x, w = _gauss_jacobi01(n, 0.0)
        return QuadratureRule(x[:, None], w, degree)
    if sdim == 2:
        a, wa = _gauss_jacobi01(n, 1.0)
        b, wb = _gauss_jacobi01(n, 0.0)
        A, B = np.meshgrid(a, b, indexing="ij")
        W = np.outer(wa, wb)
        pts = np.column_stack([A.ravel(), (B * (1 - A)).ravel()])
        return QuadratureRule(pts, W.ravel(), degree)
    if sdim == 3:
        a, wa = _gauss_jacobi01(n, 2.0)
        b, wb = _gauss_jacobi01(n, 1.0)
        c, wc = _gauss_jacobi01(n, 0.0)
        A, B, C = np.meshgrid(a, b, c, indexing="ij")
        W = wa[:, None, None] * wb[None, :, None] * wc[None, None, :]
        x1 = A
        x2 = B * (1 - A)
        x3 = C * (1 - A) * (1 - B)
        pts = np.column_stack([x1.ravel(), x2.ravel(), x3.ravel()])
        return QuadratureRule(pts, W.ravel(), degree)
    raise ValueError(f"no quadrature for simplex dimension {sdim}")


def reference_measure(sdim: int) -> float:
    return 1.0 / math.factorial(sdim)


# -- basis ----------------------------------------------------------------


def tabulate_basis(element: ElementKind | str, points, sdim: int | None = None):
    """Scalar basis values and reference gradients at reference points.

    Returns ``values`` of shape (..., nloc) and ``grads`` of shape
    (..., nloc, sdim).  Vector elements share the scalar basis.
    """
    family = element if isinstance(element, str) else element.family
    x = np.asarray(points, dtype=float)
    if sdim is None:
        sdim = x.shape[-1]
    lead = x.shape[:-1]
    lam = np.concatenate([1.0 - x.sum(axis=-1, keepdims=True), x], axis=-1)
    dlam = np.zeros((sdim + 1, sdim))
    dlam[0] = -1.0
    dlam[1:] = np.eye(sdim)

    if family == "DG0":
        return np.ones(lead + (1,)), np.zeros(lead + (1, sdim))
    if family in ("P1", "DG1"):
        return lam, np.broadcast_to(dlam, lead + dlam.shape).copy()
    if family == "P2":
        edges = LOCAL_EDGES[sdim]
        vals_v = lam * (2 * lam - 1)
        grads_v = (4 * lam - 1)[..., None] * dlam
        li, lj = lam[..., edges[:, 0]], lam[..., edges[:, 1]]
        vals_e = 4 * li * lj
        grads_e = 4 * (li[..., None] * dlam[edges[:, 1]] + lj[..., None] * dlam[edges[:, 0]])
        return np.concatenate([vals_v, vals_e], axis=-1), np.concatenate([grads_v, grads_e], axis=-2)
    raise ValueError(f"unknown family {family!r}")


def reference_nodes(family: str, sdim: int) -> np.ndarray:
    """Lagrange node locations on the reference simplex."""
    verts = np.vstack([np.zeros(sdim), np.eye(sdim)])
    if family == "DG0":
        return verts.mean(axis=0, keepdims=True)
    if family in ("P1", "DG1"):
        return verts
    edges = LOCAL_EDGES[sdim]
    return np.vstack([verts, 0.5 * (verts[edges[:, 0]] + verts[edges[:, 1]])])


# -- dof maps -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DofMap:
    """Cell-wise dof numbering for a continuous Lagrange space."""

    mesh: Mesh
    element: ElementKind
    cell_dofs: np.ndarray  # (nc, nloc) node indices
    node_coords: np.ndarray  # (nnodes, dim)

    @property
    def num_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def ncomp(self) -> int:
        return self.element.ncomp

    @property
    def size(self) -> int:
        return self.num_nodes * self.ncomp

    def blocked(self, nodes) -> np.ndarray:
        """Expand node indices (..., n) to blocked dofs (..., n * ncomp)."""
        nodes = np.asarray(nodes)
        k = self.ncomp
        return (nodes[..., None] * k + np.arange(k)).reshape(nodes.shape[:-1] + (-1,))

    def facet_nodes(self, facets: np.ndarray) -> np.ndarray:
        """Nodes lying on the given boundary facets, (nf, nloc_facet)."""
        mesh = self.mesh
        d = mesh.dim
        cells = mesh.boundary_cells[facets]
        loc = mesh.boundary_local[facets]
        vert_sel = np.array([[j for j in range(d + 1) if j != i] for i in range(d + 1)])
        out = [self.cell_dofs[cells[:, None], vert_sel[loc]]]
        if self.element.family == "P2":
            edges = LOCAL_EDGES[d]
            edge_sel = np.array([[e for e in range(len(edges)) if i not in edges[e]] for i in range(d + 1)])
            out.append(self.cell_dofs[cells[:, None], d + 1 + edge_sel[loc]])
        return np.concatenate(out, axis=1)


def _edges(cells: np.ndarray, sdim: int):
    local = LOCAL_EDGES[sdim]
    all_edges = np.sort(cells[:, local].reshape(-1, 2), axis=1)
    uniq, inverse = np.unique(all_edges, axis=0, return_inverse=True)
    return uniq, inverse.reshape(cells.shape[0], len(local))


def make_dofmap(mesh: Mesh, element: ElementKind) -> DofMap:
    if element.family == "P1":
        return DofMap(mesh, element, mesh.cells.copy(), mesh.vertices)
    if element.family == "P2":
        edges, cell_edges = _edges(mesh.cells, mesh.dim)
        coords = np.vstack([mesh.vertices, mesh.vertices[edges].mean(axis=1)])
        dofs = np.hstack([mesh.cells, mesh.num_vertices + cell_edges])
        return DofMap(mesh, element, dofs, coords)
    raise ValueError(f"{element.family} is a boundary space; use BoundarySpace")


@lru_cache(maxsize=64)
def _cached_dofmap(mesh: Mesh, family: str, ncomp: int) -> DofMap:
    return make_dofmap(mesh, ElementKind(family, ncomp))


def function_space(mesh: Mesh, family: str, vector: bool = False) -> DofMap:
    return _cached_dofmap(mesh, family, mesh.dim if vector else 1)


# -- fields ---------------------------------------------------------------


@dataclass(eq=False)
class Field:
    dofmap: DofMap
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.dofmap.size,):
            raise ValueError(f"coefficient length {self.coefficients.shape} != dof count {self.dofmap.size}")

    @property
    def nodal(self) -> np.ndarray:
        """(nnodes, ncomp) view of the coefficients."""
        return self.coefficients.reshape(-1, self.dofmap.ncomp)

    def local(self, cells=None) -> np.ndarray:
        """Cell-local coefficients (nc, nloc, ncomp)."""
        dofs = self.dofmap.cell_dofs if cells is None else self.dofmap.cell_dofs[cells]
        return self.nodal[dofs]

    def eval_ref(self, cells, ref_points):
        """Values (n, nq, ncomp) and physical gradients (n, nq, ncomp, dim).

        ``ref_points`` has shape (nq, dim) (shared) or (n, nq, dim).
        """
        mesh = self.dofmap.mesh
        vals, grads = tabulate_basis(self.dofmap.element, ref_points)
        coef = self.local(cells)
        invj = mesh.inv_jacobians[cells]
        if vals.ndim == 2:
            u = np.einsum("qa,cak->cqk", vals, coef)
            g = np.einsum("qam,cmj,cak->cqkj", grads, invj, coef)
        else:
            u = np.einsum("cqa,cak->cqk", vals, coef)
            g = np.einsum("cqam,cmj,cak->cqkj", grads, invj, coef)
        return u, g


def interpolate(dofmap: DofMap, analytic: Callable[[np.ndarray], np.ndarray]) -> Field:
    """Nodal interpolation; ``analytic`` maps (n, dim) points to (n,) or (n, ncomp)."""
    vals = np.asarray(analytic(dofmap.node_coords), dtype=float)
    vals = vals.reshape(dofmap.num_nodes, dofmap.ncomp)
    return Field(dofmap, vals.ravel())


def physical_points(mesh: Mesh, cells, ref_points) -> np.ndarray:
    x0 = mesh.vertices[mesh.cells[cells, 0]]
    return x0[:, None, :] + np.einsum("cij,qj->cqi", mesh.jacobians[cells], ref_points)


def to_reference(mesh: Mesh, cells, x) -> np.ndarray:
    """Map physical points (n, nq, dim) into reference coordinates of ``cells``."""
    x0 = mesh.vertices[mesh.cells[cells, 0]]
    return np.einsum("cij,cqj->cqi", mesh.inv_jacobians[cells], x - x0[:, None, :])


def _vector(values, n, nq):
    return np.asarray(values, dtype=float).reshape(n, nq, -1)


def l2_error(field: Field, exact: Callable[[np.ndarray], np.ndarray] | None = None, quad_degree: int = 8) -> float:
    """sqrt(int_Omega |field - exact|^2 dx); exact=None gives the field norm."""
    mesh = field.dofmap.mesh
    rule = quadrature(mesh.dim, quad_degree)
    cells = np.arange(mesh.num_cells)
    u, _ = field.eval_ref(cells, rule.points)
    if exact is not None:
        x = physical_points(mesh, cells, rule.points)
        ex = _vector(exact(x.reshape(-1, mesh.dim)), mesh.num_cells, len(rule.weights))
        u = u - ex
    w = rule.weights[None, :] * np.abs(mesh.detj)[:, None]
    return float(np.sqrt(np.sum(w * np.sum(u * u, axis=2))))


def integrate(mesh: Mesh, values_fn, quad_degree: int = 8) -> float:
    """int_Omega values_fn(x) dx for a scalar coordinate function."""
    rule = quadrature(mesh.dim, quad_degree)
    cells = np.arange(mesh.num_cells)
    x = physical_points(mesh, cells, rule.points)
    vals = np.asarray(values_fn(x.reshape(-1, mesh.dim)), dtype=float).reshape(mesh.num_cells, -1)
    return float(np.sum(vals * rule.weights[None, :] * np.abs(mesh.detj)[:, None]))


# -- facet quadrature -----------------------------------------------------


@dataclass(frozen=True)
class FacetQuadrature:
    """Quadrature on a set of facets: physical points and weights."""

    points: np.ndarray  # (nf, nq, dim)
    weights: np.ndarray  # (nf, nq), include facet measure
    bary: np.ndarray  # (nq, dim) facet barycentric coordinates


def facet_quadrature(mesh: Mesh, facets_vertices: np.ndarray, areas: np.ndarray, degree: int) -> FacetQuadrature:
    sdim = mesh.dim - 1
    rule = quadrature(sdim, degree)
    bary = rule.barycentric
    x = np.einsum("qk,fkd->fqd", bary, mesh.vertices[facets_vertices])
    w = rule.weights[None, :] * (areas / reference_measure(sdim))[:, None]
    return FacetQuadrature(x, w, bary)


def boundary_quadrature(mesh: Mesh, facets: np.ndarray, degree: int) -> FacetQuadrature:
    return facet_quadrature(mesh, mesh.boundary_facets[facets], mesh.boundary_areas[facets], degree)


def eval_on_points(field: Field, cells, x):
    """Evaluate field values and gradients at physical points lying in ``cells``."""
    ref = to_reference(field.dofmap.mesh, cells, x)
    return field.eval_ref(cells, ref)


def basis_on_points(dofmap: DofMap, cells, x):
    """Scalar basis values (n, nq, nloc) and physical grads (n, nq, nloc, dim)."""
    mesh = dofmap.mesh
    ref = to_reference(mesh, cells, x)
    vals, grads = tabulate_basis(dofmap.element, ref)
    g = np.einsum("cqam,cmj->cqaj", grads, mesh.inv_jacobians[cells])
    return vals, g


def cell_basis(dofmap: DofMap, degree: int, cells=None):
    """Basis on a cell rule: values (nq, nloc), physical grads (nc, nq, nloc, dim), weights (nc, nq)."""
    mesh = dofmap.mesh
    sel = slice(None) if cells is None else cells
    rule = quadrature(mesh.dim, degree)
    vals, grads = tabulate_basis(dofmap.element, rule.points)
    g = np.einsum("qam,cmj->cqaj", grads, mesh.inv_jacobians[sel])
    w = rule.weights[None, :] * np.abs(mesh.detj[sel])[:, None]
    return vals, g, w, rule


# -- boundary spaces ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundarySpace:
    """CG1, DG1 or DG0 space living on a set of boundary facets.

    ``facet_dofs`` (nf, nloc) numbers the scalar dofs on each facet.  For
    CG1 the dofs are mesh vertices (optionally split per region tag so
    that different regions never share a dof); ``dof_vertices`` maps CG1
    and DG1 dofs back to mesh vertices.
    """

    mesh: Mesh
    kind: str
    facets: np.ndarray
    facet_dofs: np.ndarray
    num_dofs: int
    dof_vertices: np.ndarray | None
    dof_tags: np.ndarray

    @property
    def family(self) -> str:
        return {"CG1": "P1", "DG1": "DG1", "DG0": "DG0"}[self.kind]

    @property
    def is_local(self) -> bool:
        return self.kind != "CG1"


def boundary_space(mesh: Mesh, kind: str, facets, split_regions: bool = False) -> BoundarySpace:
    facets = np.asarray(facets, dtype=np.int64)
    if facets.size == 0:
        raise ValueError("boundary space needs a non-empty set of marked facets")
    kind = kind.upper()
    fv = mesh.boundary_facets[facets]
    tags = mesh.boundary_markers[facets]
    nf, nv = fv.shape
    if kind == "DG0":
        return BoundarySpace(mesh, kind, facets, np.arange(nf)[:, None], nf, None, tags.copy())
    if kind == "DG1":
        dofs = np.arange(nf * nv).reshape(nf, nv)
        return BoundarySpace(mesh, kind, facets, dofs, nf * nv, fv.ravel().copy(), np.repeat(tags, nv))
    if kind == "CG1":
        region = tags if split_regions else np.zeros_like(tags)
        key = np.stack([np.repeat(region, nv), fv.ravel()], axis=1)
        uniq, inverse = np.unique(key, axis=0, return_inverse=True)
        dofs = inverse.reshape(nf, nv)
        tag_of = np.empty(len(uniq), dtype=np.int64)
        tag_of[dofs.ravel()] = np.repeat(tags, nv)
        return BoundarySpace(mesh, kind, facets, dofs, len(uniq), uniq[:, 1].copy(), tag_of)
    raise ValueError(f"unknown boundary space {kind!r}; expected CG1, DG1 or DG0")


def boundary_basis(space: BoundarySpace, bary: np.ndarray) -> np.ndarray:
    """Facet basis values (nq, nloc) at facet barycentric points."""
    if space.kind == "DG0":
        return np.ones((bary.shape[0], 1))
    return bary


def boundary_mass_matrix(space: BoundarySpace, degree: int = 4) -> sp.csr_matrix:
    """Scalar mass matrix int_Gamma phi_i phi_j ds on the marked facets."""
    mesh = space.mesh
    q = boundary_quadrature(mesh, space.facets, degree)
    phi = boundary_basis(space, q.bary)
    local = np.einsum("fq,qa,qb->fab", q.weights, phi, phi)
    rows = np.repeat(space.facet_dofs[:, :, None], phi.shape[1], axis=2)
    cols = np.repeat(space.facet_dofs[:, None, :], phi.shape[1], axis=1)
    from .linalg import assemble

    return assemble((rows.ravel(), cols.ravel(), local.ravel()), (space.num_dofs, space.num_dofs))
