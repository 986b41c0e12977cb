"""Wall shear stress evaluation.

Two families of methods are provided:

* L2 projection of the tangential viscous traction onto a CG1, DG1 or DG0
  space on the wall facets.  The pressure drops out of the tangential part,
  so only the velocity gradient enters.  DG spaces are solved facet by
  facet.
* Boundary-flux evaluation: the traction is recovered from the residual of
  the discrete momentum equation tested with CG1 functions supported on the
  wall, with the normal part and the traction on the remaining boundary
  regions subtracted.  If the wall condition was imposed with Nitsche's
  method, the consistency-adjoint and penalty terms stay on the
  right-hand side.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from . import linalg
from .fem import (
    BoundarySpace,
    basis_on_points,
    boundary_basis as space_basis,
    boundary_mass_matrix,
    boundary_quadrature,
    boundary_space,
    cell_basis,
    eval_on_points,
    function_space,
    physical_points,
)
from .forms import batches, traction_operator
from .mesh import Mesh, MeshError
from .stokes import FlowProblem, FlowSolution, ProblemError, bh_stabilization

SPACES = ("CG1", "DG1", "DG0")


class WssError(ValueError):
    """Invalid WSS request (empty region, configuration mismatch, ...)."""


@dataclass(eq=False)
class WssField:
    """Vector WSS on boundary facets.

    ``values`` has one row per boundary dof of ``space``; only the marked
    region carries dofs, so interior values are implicitly zero.
    """

    space: BoundarySpace
    values: np.ndarray  # (num_dofs, dim)
    method: str

    @property
    def kind(self) -> str:
        return self.space.kind

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    @property
    def boundary_dofs(self) -> np.ndarray:
        return np.arange(self.space.num_dofs)

    def facet_values(self, bary: np.ndarray, facets=None) -> np.ndarray:
        """Values at facet barycentric points, (nf, nq, dim)."""
        dofs = self.space.facet_dofs if facets is None else self.space.facet_dofs[facets]
        phi = space_basis(self.space, bary)
        return np.einsum("qa,fak->fqk", phi, self.values[dofs])

    def domain_coefficients(self) -> np.ndarray:
        """CG1 values scattered onto all mesh vertices, zero away from the region."""
        if self.kind != "CG1":
            raise WssError("domain_coefficients is defined for CG1 fields only")
        out = np.zeros((self.mesh.num_vertices, self.mesh.dim))
        out[self.space.dof_vertices] = self.values
        return out

    def region_mask(self, region=None) -> np.ndarray:
        """Boolean mask over the field's facets for the given region(s)."""
        if region is None:
            return np.ones(len(self.space.facets), dtype=bool)
        regions = [region] if isinstance(region, (str, int, np.integer)) else list(region)
        tags = [self.mesh.tag(r) for r in regions]
        return np.isin(self.mesh.boundary_markers[self.space.facets], tags)


def _region_facets(mesh: Mesh, region) -> np.ndarray:
    try:
        facets = mesh.facets_with(region)
    except MeshError as exc:
        raise WssError(str(exc)) from None
    if facets.size == 0:
        raise WssError(f"region {region!r} has no boundary facets")
    return facets


def viscous_traction(grad: np.ndarray, n: np.ndarray, mu: float, stress: str) -> np.ndarray:
    """mu grad v n or 2 mu D(v) n at points; grad (nf, nq, d, d), n (nf, d)."""
    t = mu * np.einsum("fqij,fj->fqi", grad, n)
    if stress == "symmetric_gradient":
        t = t + mu * np.einsum("fqji,fj->fqi", grad, n)
    return t


def tangential(t: np.ndarray, n: np.ndarray) -> np.ndarray:
    return t - np.einsum("fqi,fi->fq", t, n)[..., None] * n[:, None, :]


def _solve_boundary(space: BoundarySpace, rhs: np.ndarray) -> np.ndarray:
    """Solve M tau = rhs for every component; DG spaces facet-locally."""
    if space.is_local:
        return local_boundary_solve(space, rhs)
    M = boundary_mass_matrix(space)
    lu = linalg.factorize(M, "superlu")
    return np.column_stack([lu.solve(rhs[:, k]) for k in range(rhs.shape[1])])


def local_mass_blocks(space: BoundarySpace, degree: int = 4) -> np.ndarray:
    q = boundary_quadrature(space.mesh, space.facets, degree)
    phi = space_basis(space, q.bary)
    return np.einsum("fq,qa,qb->fab", q.weights, phi, phi)


def local_boundary_solve(space: BoundarySpace, rhs: np.ndarray) -> np.ndarray:
    blocks = local_mass_blocks(space)
    local_rhs = rhs[space.facet_dofs]  # (nf, nloc, d)
    sol = np.linalg.solve(blocks, local_rhs)
    out = np.zeros_like(rhs)
    out[space.facet_dofs] = sol
    return out


def projection_rhs(v, mu: float, stress: str, space: BoundarySpace, degree: int = 4) -> np.ndarray:
    """int_Gamma (T n)_t . phi ds with the viscous traction of v."""
    mesh = space.mesh
    q = boundary_quadrature(mesh, space.facets, degree)
    _, g = eval_on_points(v, mesh.boundary_cells[space.facets], q.points)
    n = mesh.boundary_normals[space.facets]
    t = tangential(viscous_traction(g, n, mu, stress), n)
    phi = space_basis(space, q.bary)
    local = np.einsum("fq,qa,fqk->fak", q.weights, phi, t)
    out = np.zeros((space.num_dofs, mesh.dim))
    for k in range(mesh.dim):
        out[:, k] = np.bincount(space.facet_dofs.ravel(), local[:, :, k].ravel(), minlength=space.num_dofs)
    return out


def project_wss(v, mu: float, stress: str, region, kind: str, split_regions: bool = False) -> WssField:
    """L2 projection of the tangential traction onto a boundary space.

    ``split_regions`` gives every region tag in ``region`` its own CG1 dofs,
    so the field may jump across corners between regions.
    """
    kind = kind.upper()
    if kind not in SPACES:
        raise WssError(f"unknown WSS space {kind!r}; expected one of {SPACES}")
    mesh = v.dofmap.mesh
    space = boundary_space(mesh, kind, _region_facets(mesh, region), split_regions)
    rhs = projection_rhs(v, mu, stress, space)
    return WssField(space, _solve_boundary(space, rhs), f"{kind.lower()}")


# -- boundary-flux evaluation ---------------------------------------------


def _momentum_residual_p1(solution: FlowSolution, degree: int = 5) -> np.ndarray:
    """Domain part of the momentum residual against P1 hat functions.

    Returns (nvertices, dim): int T(v,p) : grad phi + rho ((grad v) v) . phi
    - f . phi (+ stabilization acting on v when the velocity space is P1).
    """
    problem = solution.problem
    mesh = problem.mesh
    d = mesh.dim
    P1 = function_space(mesh, "P1")
    out = np.zeros((mesh.num_vertices, d))
    convection = 0.0 if solution.ns_config is None else solution.ns_config.convection
    for cells in batches(mesh.num_cells):
        phi, G, w, rule = cell_basis(P1, degree, cells)
        u, gv = solution.v.eval_ref(cells, rule.points)
        p, _ = solution.p.eval_ref(cells, rule.points)
        T = problem.mu * gv
        if problem.stress == "symmetric_gradient":
            T = T + problem.mu * np.swapaxes(gv, 2, 3)
        T = T - p[..., 0][..., None, None] * np.eye(d)
        local = np.einsum("cq,cqjk,cqak->caj", w, T, G)
        if convection != 0.0:
            conv = problem.rho * convection * np.einsum("cqjk,cqk->cqj", gv, u)
            local += np.einsum("cq,qa,cqj->caj", w, phi, conv)
        if problem.body_force is not None:
            x = physical_points(mesh, cells, rule.points)
            f = np.asarray(problem.body_force(x.reshape(-1, d)), dtype=float).reshape(len(cells), -1, d)
            local -= np.einsum("cq,qa,cqj->caj", w, phi, f)
        verts = mesh.cells[cells].ravel()
        for k in range(d):
            out[:, k] += np.bincount(verts, local[:, :, k].ravel(), minlength=mesh.num_vertices)
    if problem.element == "P1P1stab":
        out += _stabilization_action(solution).reshape(-1, d)
    return out


def _stabilization_action(solution: FlowSolution) -> np.ndarray:
    """S[(v, p), (phi, 0)]: the velocity-test rows of the stabilization."""
    problem = solution.problem
    lay = problem.layout
    if solution.ns_config is None:
        buf = bh_stabilization(problem)
    else:
        from .navier_stokes import cip_stabilization

        buf = cip_stabilization(problem, solution.ns_config, solution.v)
    S = buf.tocsr((lay.size, lay.size))
    U = np.zeros(lay.size)
    U[: lay.nv] = solution.v.coefficients
    U[lay.nv : lay.nv + lay.np] = solution.p.coefficients
    return (S @ U)[: lay.nv]


def boundary_flux_wss(solution: FlowSolution, region, problem: FlowProblem | None = None, degree: int = 4) -> WssField:
    """Boundary-flux WSS on ``region`` in a CG1 space.

    All other boundary regions are treated as Neumann boundaries whose
    traction is subtracted.  ``problem``, if given, must match the
    configuration the solution was computed with.
    """
    if problem is not None:
        expected = problem.fingerprint()
        if solution.fingerprint[: len(expected)] != expected:
            raise WssError("solution was computed with a different problem configuration")
    problem = solution.problem
    mesh = problem.mesh
    d = mesh.dim
    wall = _region_facets(mesh, region)
    space = boundary_space(mesh, "CG1", wall)
    others = np.setdiff1d(np.arange(len(mesh.boundary_facets)), wall)

    r = _momentum_residual_p1(solution)

    def facet_traction(facets):
        q = boundary_quadrature(mesh, facets, degree)
        cells = mesh.boundary_cells[facets]
        u, g = eval_on_points(solution.v, cells, q.points)
        p, _ = eval_on_points(solution.p, cells, q.points)
        n = mesh.boundary_normals[facets]
        t = viscous_traction(g, n, problem.mu, problem.stress) - p[..., 0][..., None] * n[:, None, :]
        return q, u, t, n

    def scatter(facets, q, local):
        verts = mesh.boundary_facets[facets]
        for k in range(d):
            r[:, k] += np.bincount(verts.ravel(), local[:, :, k].ravel(), minlength=mesh.num_vertices)

    # - int_wall (T n . n) n . phi
    q, u, t, n = facet_traction(wall)
    tn = np.einsum("fqi,fi->fq", t, n)[..., None] * n[:, None, :]
    scatter(wall, q, -np.einsum("fq,qa,fqk->fak", q.weights, q.bary, tn))

    # - int_other (T n) . phi
    if others.size:
        qo, _, to, _ = facet_traction(others)
        scatter(others, qo, -np.einsum("fq,qa,fqk->fak", qo.weights, qo.bary, to))

    # Nitsche consistency-adjoint and penalty terms stay on the right-hand
    # side; wall test functions reach neighbouring regions through their
    # cells, so every Nitsche-imposed facet contributes.
    bc_of = dict(problem.bc_items())
    tags = mesh.boundary_markers
    for tag in np.unique(tags):
        bc = bc_of.get(int(tag))
        if bc is None or bc.kind != "nitsche_dirichlet":
            continue
        sel = np.flatnonzero(tags == tag)
        qn, un, _, nn = facet_traction(sel)
        cells = mesh.boundary_cells[sel]
        scale = solution.info.get("inflow_scale", 1.0)
        jump = un - scale * bc.evaluate(qn.points.reshape(-1, d)).reshape(un.shape)
        P1 = function_space(mesh, "P1")
        phi_c, G_c = basis_on_points(P1, cells, qn.points)
        Tphi = traction_operator(G_c, np.zeros(phi_c.shape[:2] + (0,)), nn, problem.mu, problem.stress)
        Tphi = Tphi.reshape(len(sel), -1, phi_c.shape[2], d, d)  # [f, q, a, i, k]
        pen = problem.nitsche.beta * problem.mu / mesh.h_cell[cells]
        local = np.einsum("fq,fqaik,fqk->fai", qn.weights, Tphi, jump)
        local += pen[:, None, None] * np.einsum("fq,fqa,fqi->fai", qn.weights, phi_c, jump)
        for k in range(d):
            r[:, k] += np.bincount(mesh.cells[cells].ravel(), local[:, :, k].ravel(), minlength=mesh.num_vertices)

    rhs = r[space.dof_vertices]
    return WssField(space, _solve_boundary(space, rhs), "bflux")


def boundary_flux_wss_2d_per_side(solution: FlowSolution, sides=("left", "right", "bottom", "top")) -> WssField:
    """Boundary-flux WSS computed separately on each side, then combined.

    Each side uses its own CG1 test functions with the traction on the
    other sides subtracted, which avoids coupling through the corners.
    """
    mesh = solution.problem.mesh
    if mesh.dim != 2:
        raise WssError("per-side boundary flux needs a 2D mesh")
    missing = [s for s in sides if s not in mesh.tags]
    if missing:
        raise WssError(f"mesh lacks side markers {missing}")
    combined = boundary_space(mesh, "CG1", mesh.facets_with(list(sides)), split_regions=True)
    values = np.zeros((combined.num_dofs, mesh.dim))
    lookup = {(int(t), int(v)): i for i, (t, v) in enumerate(zip(combined.dof_tags, combined.dof_vertices))}
    for side in sides:
        part = boundary_flux_wss(solution, side)
        tag = mesh.tag(side)
        for v, val in zip(part.space.dof_vertices, part.values):
            values[lookup[(tag, int(v))]] = val
    return WssField(combined, values, "bflux")


# -- errors, statistics and indicators -------------------------------------


def wss_l2_error(field: WssField, exact, degree: int = 8) -> float:
    """sqrt(int_region |tau - exact|^2 ds); ``exact(points, normals, tags)`` -> (n, dim)."""
    mesh = field.mesh
    q = boundary_quadrature(mesh, field.space.facets, degree)
    vals = field.facet_values(q.bary)
    nf, nq, d = vals.shape
    normals = np.repeat(mesh.boundary_normals[field.space.facets], nq, axis=0)
    tags = np.repeat(mesh.boundary_markers[field.space.facets], nq)
    ex = np.asarray(exact(q.points.reshape(-1, d), normals, tags), dtype=float).reshape(nf, nq, d)
    return float(np.sqrt(np.sum(q.weights * np.sum((vals - ex) ** 2, axis=2))))


def wss_l2_difference(a: WssField, b: WssField, degree: int = 8) -> float:
    """Relative L2 difference ||a - b|| / ||b|| over the facets of ``b``."""
    if not np.array_equal(a.space.facets, b.space.facets):
        raise WssError("fields live on different facet sets")
    q = boundary_quadrature(a.mesh, a.space.facets, degree)
    va, vb = a.facet_values(q.bary), b.facet_values(q.bary)
    diff = np.sum(q.weights * np.sum((va - vb) ** 2, axis=2))
    ref = np.sum(q.weights * np.sum(vb**2, axis=2))
    return float(np.sqrt(diff / ref))


@dataclass(frozen=True)
class WssStats:
    max: float
    min: float
    avg: float
    area: float


def wss_stats(field: WssField, region=None, degree: int = 4) -> WssStats:
    """Max/min of |tau| over dof values, area-weighted mean of |tau|."""
    mask = field.region_mask(region)
    if not mask.any():
        raise WssError(f"region {region!r} is empty for this field")
    dofs = np.unique(field.space.facet_dofs[mask])
    mag = np.linalg.norm(field.values[dofs], axis=1)
    q = boundary_quadrature(field.mesh, field.space.facets[mask], degree)
    vals = np.linalg.norm(field.facet_values(q.bary, np.flatnonzero(mask)), axis=2)
    area = float(q.weights.sum())
    avg = float(np.sum(q.weights * vals) / area)
    return WssStats(float(mag.max()), float(mag.min()), avg, area)


def _subcell_points(sdim: int):
    """Barycentric sample points and area fractions of the LSA subdivision."""
    if sdim == 1:
        return np.array([[5 / 6, 1 / 6], [1 / 2, 1 / 2], [1 / 6, 5 / 6]]), np.full(3, 1 / 3)
    pts = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3], [1 / 3, 1 / 3, 1 / 3]])
    return pts, np.full(4, 1 / 4)


def lsa(field: WssField, region=None, parent_mean: float = 1.0) -> float:
    """Percentage of the region area where |tau| < 0.1 * parent_mean."""
    if not parent_mean > 0:
        raise WssError("parent_mean must be positive")
    mask = field.region_mask(region)
    if not mask.any():
        raise WssError(f"region {region!r} is empty for this field")
    facets = field.space.facets[mask]
    areas = field.mesh.boundary_areas[facets]
    threshold = 0.1 * parent_mean
    if field.kind == "DG0":
        low = np.linalg.norm(field.values[field.space.facet_dofs[mask, 0]], axis=1) < threshold
        low_area = np.sum(areas[low])
    else:
        bary, frac = _subcell_points(field.mesh.dim - 1)
        vals = np.linalg.norm(field.facet_values(bary, np.flatnonzero(mask)), axis=2)
        low_area = np.sum(areas[:, None] * frac[None, :] * (vals < threshold))
    return float(100.0 * low_area / areas.sum())


# -- export ---------------------------------------------------------------


def _points_and_values(field: WssField):
    """Sample ids, coordinates and values: per dof for CG1/DG1, per facet for DG0."""
    mesh = field.mesh
    if field.kind == "DG0":
        ids = field.space.facets
        coords = mesh.vertices[mesh.boundary_facets[ids]].mean(axis=1)
    else:
        ids = field.space.dof_vertices
        coords = mesh.vertices[ids]
    return ids, coords, field.values


def write_csv(field: WssField, path) -> None:
    ids, coords, vals = _points_and_values(field)
    d = field.mesh.dim
    id_name = "facet_id" if field.kind == "DG0" else "vertex_id"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([id_name] + ["xyz"[k] for k in range(d)] + [f"tau_{'xyz'[k]}" for k in range(d)] + ["tau_mag"])
        for i, x, t in zip(ids, coords, vals):
            w.writerow([int(i)] + [repr(float(c)) for c in x] + [repr(float(c)) for c in t] + [repr(float(np.linalg.norm(t)))])


def write_vtu(field: WssField, path) -> None:
    """Surface mesh of the region with tau as point (CG1/DG1) or cell (DG0) data."""
    mesh = field.mesh
    d = mesh.dim
    fv = mesh.boundary_facets[field.space.facets]
    if field.kind == "CG1":
        pts_idx, conn = np.unique(fv, return_inverse=True)
        points = mesh.vertices[pts_idx]
        conn = conn.reshape(fv.shape)
        # split-region CG1 dofs: take the dof attached to each facet corner
        point_vals = np.zeros((len(points), d))
        point_vals[conn.ravel()] = field.values[field.space.facet_dofs.ravel()]
    else:
        points = mesh.vertices[fv.reshape(-1)]
        conn = np.arange(fv.size).reshape(fv.shape)
        point_vals = field.values[field.space.facet_dofs].reshape(-1, d) if field.kind == "DG1" else None
    pad = np.zeros((len(points), 3 - d))
    pts3 = np.hstack([points, pad])
    ctype = 3 if d == 2 else 5  # VTK_LINE / VTK_TRIANGLE

    def arr(values, ncomp, name):
        flat = " ".join(repr(float(x)) for x in np.asarray(values).ravel())
        return f'<DataArray type="Float64" Name="{escape(name)}" NumberOfComponents="{ncomp}" format="ascii">{flat}</DataArray>'

    def vec3(v):
        return np.hstack([v, np.zeros((len(v), 3 - d))])

    lines = [
        '<?xml version="1.0"?>',
        '<VTKFile type="UnstructuredGrid" version="0.1" byte_order="LittleEndian">',
        "<UnstructuredGrid>",
        f'<Piece NumberOfPoints="{len(points)}" NumberOfCells="{len(conn)}">',
        "<Points>",
        arr(pts3, 3, "Points"),
        "</Points>",
        "<Cells>",
        '<DataArray type="Int64" Name="connectivity" format="ascii">' + " ".join(map(str, conn.ravel())) + "</DataArray>",
        '<DataArray type="Int64" Name="offsets" format="ascii">'
        + " ".join(str((i + 1) * d) for i in range(len(conn)))
        + "</DataArray>",
        '<DataArray type="UInt8" Name="types" format="ascii">' + " ".join([str(ctype)] * len(conn)) + "</DataArray>",
        "</Cells>",
    ]
    if point_vals is not None:
        lines += ["<PointData>", arr(vec3(point_vals), 3, "wss"), arr(np.linalg.norm(point_vals, axis=1), 1, "wss_magnitude"), "</PointData>"]
    else:
        lines += ["<CellData>", arr(vec3(field.values), 3, "wss"), arr(np.linalg.norm(field.values, axis=1), 1, "wss_magnitude"), "</CellData>"]
    lines += ["</Piece>", "</UnstructuredGrid>", "</VTKFile>"]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


__all__ = [
    "WssError",
    "WssField",
    "WssStats",
    "project_wss",
    "boundary_flux_wss",
    "boundary_flux_wss_2d_per_side",
    "wss_l2_error",
    "wss_l2_difference",
    "wss_stats",
    "lsa",
    "write_csv",
    "write_vtu",
    "ProblemError",
]
