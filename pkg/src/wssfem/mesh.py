"""Simplicial meshes (triangles and tetrahedra) with boundary markers.

Meshes are immutable once built.  Boundary facets carry an integer marker
tag; interior facets store their two neighbouring cells.  Geometric
quantities needed during assembly (affine maps, circumdiameters, facet
normals and measures) are computed once and cached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np


class MeshError(ValueError):
    """Raised for invalid mesh input or construction failures."""


@dataclass(frozen=True)
class RegionTags:
    """Integer marker tags for the named boundary regions."""

    inlet: int = 1
    outlet: int = 2
    wall: int = 3
    left: int = 11
    right: int = 12
    bottom: int = 13
    top: int = 14

    def __post_init__(self):
        values = list(self.as_dict().values())
        if len(set(values)) != len(values):
            raise MeshError(f"region tags must be distinct, got {self.as_dict()}")

    def as_dict(self) -> dict[str, int]:
        return {
            "inlet": self.inlet,
            "outlet": self.outlet,
            "wall": self.wall,
            "left": self.left,
            "right": self.right,
            "bottom": self.bottom,
            "top": self.top,
        }


DEFAULT_TAGS = RegionTags()

# Local facet i of a cell is the facet opposite local vertex i.
_LOCAL_FACETS = {
    2: np.array([[1, 2], [0, 2], [0, 1]]),
    3: np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]),
}


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh.

    Attributes
    ----------
    vertices : (nv, dim) float array, metres.
    cells : (nc, dim+1) int array, positively oriented.
    boundary_facets : (nb, dim) int array of vertex indices.
    boundary_cells, boundary_local : adjacent cell and its local facet index.
    boundary_markers : (nb,) int array of region tags.
    interior_facets : (ni, dim) int array.
    interior_cells : (ni, 2) int array of adjacent cells.
    tags : name -> integer tag for the regions present in this mesh.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: np.ndarray
    boundary_cells: np.ndarray
    boundary_local: np.ndarray
    boundary_markers: np.ndarray
    interior_facets: np.ndarray
    interior_cells: np.ndarray
    tags: dict[str, int] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    def tag(self, name_or_tag: str | int) -> int:
        if isinstance(name_or_tag, str):
            try:
                return self.tags[name_or_tag]
            except KeyError:
                raise MeshError(f"unknown region {name_or_tag!r}; mesh has {sorted(self.tags)}") from None
        return int(name_or_tag)

    def facets_with(self, regions) -> np.ndarray:
        """Indices of boundary facets carrying any of the given regions."""
        if isinstance(regions, (str, int, np.integer)):
            regions = [regions]
        tags = [self.tag(r) for r in regions]
        return np.flatnonzero(np.isin(self.boundary_markers, tags))

    # -- geometry -------------------------------------------------------

    @cached_property
    def jacobians(self) -> np.ndarray:
        """(nc, dim, dim) affine-map Jacobians, columns x_i - x_0."""
        x = self.vertices[self.cells]
        return np.transpose(x[:, 1:, :] - x[:, :1, :], (0, 2, 1))

    @cached_property
    def detj(self) -> np.ndarray:
        return np.linalg.det(self.jacobians)

    @cached_property
    def inv_jacobians(self) -> np.ndarray:
        return np.linalg.inv(self.jacobians)

    @cached_property
    def cell_volumes(self) -> np.ndarray:
        return np.abs(self.detj) / math.factorial(self.dim)

    @cached_property
    def h_cell(self) -> np.ndarray:
        """Circumdiameter of every cell."""
        return circumdiameters(self.vertices, self.cells)

    @cached_property
    def boundary_normals(self) -> np.ndarray:
        """(nb, dim) outward unit normals of the boundary facets."""
        return _facet_normals(self.vertices, self.boundary_facets, self.cells[self.boundary_cells])

    @cached_property
    def boundary_areas(self) -> np.ndarray:
        return facet_measures(self.vertices, self.boundary_facets)

    @cached_property
    def interior_normals(self) -> np.ndarray:
        """(ni, dim) unit normals pointing out of interior_cells[:, 0]."""
        return _facet_normals(self.vertices, self.interior_facets, self.cells[self.interior_cells[:, 0]])

    @cached_property
    def interior_areas(self) -> np.ndarray:
        return facet_measures(self.vertices, self.interior_facets)

    def facet_normal(self, facet: int) -> np.ndarray:
        return facet_normal(self, facet)


def circumdiameters(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    x = vertices[cells]
    d = x[:, 1:, :] - x[:, :1, :]
    rhs = 0.5 * np.sum(d * d, axis=2)
    # centre c relative to x_0 solves d_i . c = |d_i|^2 / 2
    centre = np.linalg.solve(d, rhs[..., None])[..., 0]
    return 2.0 * np.linalg.norm(centre, axis=1)


def facet_measures(vertices: np.ndarray, facets: np.ndarray) -> np.ndarray:
    x = vertices[facets]
    if facets.shape[1] == 2:
        return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)
    return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)


def _facet_normals(vertices, facets, owner_cells) -> np.ndarray:
    x = vertices[facets]
    if facets.shape[1] == 2:
        t = x[:, 1] - x[:, 0]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    else:
        n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
    n /= np.linalg.norm(n, axis=1)[:, None]
    outward = x.mean(axis=1) - vertices[owner_cells].mean(axis=1)
    flip = np.sum(n * outward, axis=1) < 0
    n[flip] *= -1.0
    return n


def facet_normal(mesh: Mesh, facet: int) -> np.ndarray:
    """Outward unit normal of boundary facet ``facet``."""
    return mesh.boundary_normals[facet].copy()


def build_mesh(
    vertices,
    cells,
    markers: Callable[[np.ndarray, np.ndarray], np.ndarray] | Mapping[tuple, int],
    tags: Mapping[str, int],
) -> Mesh:
    """Assemble topology for a simplicial mesh.

    ``markers`` is either a function ``(centroids, normals) -> tags`` applied
    to all boundary facets, or a mapping from sorted facet vertex tuples to
    tags.  Every boundary facet must receive a tag.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    cells = np.array(cells, dtype=np.int64)
    dim = vertices.shape[1]
    if dim not in (2, 3) or cells.shape[1] != dim + 1:
        raise MeshError(f"inconsistent element dimensionality: {dim}D vertices with {cells.shape[1]}-vertex cells")

    cells = _orient(vertices, cells)

    local = _LOCAL_FACETS[dim]
    nc = cells.shape[0]
    all_facets = cells[:, local].reshape(-1, dim)
    keys = np.sort(all_facets, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise MeshError("non-manifold mesh: a facet is shared by more than two cells")
    owner = np.repeat(np.arange(nc), dim + 1)
    local_idx = np.tile(np.arange(dim + 1), nc)

    is_boundary = counts[inverse] == 1
    b = np.flatnonzero(is_boundary)
    boundary_facets = all_facets[b]
    boundary_cells = owner[b]
    boundary_local = local_idx[b]

    inner = np.flatnonzero(~is_boundary)
    order = np.argsort(inverse[inner], kind="stable")
    inner = inner[order]
    first, second = inner[0::2], inner[1::2]
    interior_facets = all_facets[first]
    interior_cells = np.stack([owner[first], owner[second]], axis=1)

    normals = _facet_normals(vertices, boundary_facets, cells[boundary_cells])
    centroids = vertices[boundary_facets].mean(axis=1)
    if callable(markers):
        marker_values = np.asarray(markers(centroids, normals), dtype=np.int64)
    else:
        marker_values = np.full(len(b), -1, dtype=np.int64)
        for k, f in enumerate(np.sort(boundary_facets, axis=1)):
            marker_values[k] = markers.get(tuple(int(i) for i in f), -1)
    missing = np.flatnonzero(marker_values < 0)
    if missing.size:
        raise MeshError(
            f"{missing.size} boundary facet(s) carry no region tag, e.g. vertices {boundary_facets[missing[0]].tolist()}"
        )

    return Mesh(
        vertices=vertices,
        cells=cells,
        boundary_facets=boundary_facets,
        boundary_cells=boundary_cells,
        boundary_local=boundary_local,
        boundary_markers=marker_values,
        interior_facets=interior_facets,
        interior_cells=interior_cells,
        tags=dict(tags),
    )


def _orient(vertices, cells):
    x = vertices[cells]
    d = np.linalg.det(np.transpose(x[:, 1:, :] - x[:, :1, :], (0, 2, 1)))
    scale = np.max(np.ptp(vertices, axis=0)) ** vertices.shape[1]
    bad = np.flatnonzero(np.abs(d) <= 1e-13 * scale)
    if bad.size:
        raise MeshError(f"degenerate cell {int(bad[0])} with vertices {cells[bad[0]].tolist()} (zero volume)")
    cells = cells.copy()
    neg = d < 0
    cells[neg, 0], cells[neg, 1] = cells[neg, 1], cells[neg, 0].copy()
    return cells


# -- generators -----------------------------------------------------------


def generate_unit_square(n: int, tags: RegionTags = DEFAULT_TAGS) -> Mesh:
    """Structured n x n unit square, every grid square cut lower-left to upper-right."""
    if n < 1:
        raise MeshError("n must be >= 1")
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    v00 = (j * (n + 1) + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
    cells = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])

    def side(centroids, normals):
        out = np.full(len(centroids), -1)
        out[np.isclose(centroids[:, 0], 0.0)] = tags.left
        out[np.isclose(centroids[:, 0], 1.0)] = tags.right
        out[np.isclose(centroids[:, 1], 0.0)] = tags.bottom
        out[np.isclose(centroids[:, 1], 1.0)] = tags.top
        return out

    names = {k: tags.as_dict()[k] for k in ("left", "right", "bottom", "top")}
    return build_mesh(vertices, cells, side, names)


def _disk(radius: float, n_circum: int):
    """Concentric-ring triangulation of a disk; outer ring has n_circum points."""
    n_rings = max(1, round(n_circum / 6))
    rings = [np.array([0])]
    points = [np.zeros(2)]
    count = 1
    for k in range(1, n_rings + 1):
        m = n_circum if k == n_rings else max(3, round(n_circum * k / n_rings))
        ang = 2.0 * np.pi * np.arange(m) / m
        r = radius * k / n_rings
        points.extend(np.stack([r * np.cos(ang), r * np.sin(ang)], 1))
        rings.append(np.arange(count, count + m))
        count += m
    points = np.array(points)
    tris = []
    m1 = len(rings[1])
    for a in range(m1):
        tris.append((0, rings[1][a], rings[1][(a + 1) % m1]))
    for k in range(2, n_rings + 1):
        tris.extend(_stitch(rings[k - 1], rings[k]))
    return points, np.array(tris), rings[-1]


def _stitch(inner, outer):
    """Triangulate the annulus between two rings by merging on angle."""
    mi, mo = len(inner), len(outer)
    tris = []
    i = j = 0
    while i < mi or j < mo:
        # fractional angle of the next candidate point on each ring
        ai = (i + 1) / mi
        ao = (j + 1) / mo
        if j >= mo or (i < mi and ai < ao):
            tris.append((inner[i % mi], inner[(i + 1) % mi], outer[j % mo]))
            i += 1
        else:
            tris.append((inner[i % mi], outer[(j + 1) % mo], outer[j % mo]))
            j += 1
    return tris


def generate_cylinder(
    radius: float, length: float, n_circum: int, n_axial: int, tags: RegionTags = DEFAULT_TAGS
) -> Mesh:
    """Tetrahedral pipe along the z-axis, extruded from a ring-structured disk.

    Each prism of the extrusion is split into three tetrahedra using the
    global vertex numbering so that shared quadrilateral faces match.
    """
    if n_circum < 6 or n_axial < 1:
        raise MeshError("generate_cylinder needs n_circum >= 6 and n_axial >= 1")
    pts, tris, _ = _disk(radius, n_circum)
    npl = len(pts)
    z = np.linspace(0.0, length, n_axial + 1)
    vertices = np.concatenate([np.column_stack([pts, np.full(npl, zk)]) for zk in z])

    tris = np.sort(tris, axis=1)
    a, b, c = tris.T
    cells = []
    for layer in range(n_axial):
        lo, hi = layer * npl, (layer + 1) * npl
        A, B, C = a + lo, b + lo, c + lo
        A2, B2, C2 = a + hi, b + hi, c + hi
        cells.append(np.stack([A, B, C, C2], 1))
        cells.append(np.stack([A, B, B2, C2], 1))
        cells.append(np.stack([A, A2, B2, C2], 1))
    cells = np.concatenate(cells)

    tol = 1e-9 * length

    def regions(centroids, normals):
        out = np.full(len(centroids), tags.wall)
        out[centroids[:, 2] < tol] = tags.inlet
        out[centroids[:, 2] > length - tol] = tags.outlet
        return out

    names = {"inlet": tags.inlet, "outlet": tags.outlet, "wall": tags.wall}
    return build_mesh(vertices, cells, regions, names)


# -- Gmsh MSH 2.2 ASCII ---------------------------------------------------

_GMSH_TYPES = {1: (1, 2), 2: (2, 3), 4: (3, 4), 15: (0, 1)}


def parse_tag_map(text: str) -> dict[int, str]:
    """Parse ``"1=inlet,2=outlet"`` or a JSON object into {physical id: region}."""
    import json

    text = text.strip()
    if text.startswith("{"):
        raw = json.loads(text)
        return {int(k): str(v) for k, v in raw.items()}
    out = {}
    for item in text.replace(";", ",").split(","):
        if not item.strip():
            continue
        key, _, value = item.partition("=")
        if not value:
            raise MeshError(f"bad tag map entry {item!r}, expected id=name")
        out[int(key)] = value.strip()
    return out


def read_gmsh(path, tag_map: Mapping[int, str] | None = None, tags: RegionTags = DEFAULT_TAGS) -> Mesh:
    """Read a Gmsh MSH 2.2 ASCII file.

    ``tag_map`` maps physical group ids of boundary facets to region names
    (``inlet``, ``wall``, ...).  Without it, ``$PhysicalNames`` are used.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    sections = {}
    k = 0
    while k < len(lines):
        ln = lines[k]
        if ln.startswith("$") and not ln.startswith("$End"):
            name = ln[1:]
            end = lines.index(f"$End{name}", k)
            sections[name] = lines[k + 1 : end]
            k = end
        k += 1

    fmt = sections.get("MeshFormat")
    if not fmt:
        raise MeshError(f"{path}: missing $MeshFormat")
    version, filetype, *_ = fmt[0].split()
    if not version.startswith("2.2") or filetype != "0":
        raise MeshError(f"{path}: unsupported MSH version {version} (file-type {filetype}); need 2.2 ASCII")

    names: dict[tuple[int, int], str] = {}
    for ln in sections.get("PhysicalNames", [])[1:]:
        pdim, pid, pname = ln.split(maxsplit=2)
        names[int(pdim), int(pid)] = pname.strip('"')
    region_tags = tags.as_dict()

    node_lines = sections["Nodes"][1:]
    ids = np.array([int(ln.split()[0]) for ln in node_lines])
    coords = np.array([[float(v) for v in ln.split()[1:4]] for ln in node_lines])
    index = {nid: i for i, nid in enumerate(ids)}

    by_dim: dict[int, list] = {0: [], 1: [], 2: [], 3: []}
    for ln in sections["Elements"][1:]:
        parts = [int(v) for v in ln.split()]
        etype, ntags = parts[1], parts[2]
        if etype not in _GMSH_TYPES:
            raise MeshError(f"{path}: unsupported element type {etype}")
        edim, nn = _GMSH_TYPES[etype]
        phys = parts[3] if ntags > 0 else 0
        nodes = [index[n] for n in parts[3 + ntags : 3 + ntags + nn]]
        by_dim[edim].append((phys, nodes))

    dim = max(d for d in by_dim if by_dim[d])
    if dim < 2:
        raise MeshError(f"{path}: no 2D or 3D cells found")
    if tag_map is None:
        tag_map = {pid: name for (pdim, pid), name in names.items() if pdim == dim - 1}
    if dim == 2 and np.any(np.abs(coords[:, 2]) > 0):
        raise MeshError(f"{path}: inconsistent element dimensionality: triangles as cells but non-planar nodes")
    cells = np.array([n for _, n in by_dim[dim]])
    used = np.unique(cells)
    remap = -np.ones(len(coords), dtype=np.int64)
    remap[used] = np.arange(len(used))
    vertices = coords[used, :dim]
    cells = remap[cells]

    facet_tags = {}
    for phys, nodes in by_dim[dim - 1]:
        if phys == 0:
            raise MeshError(f"{path}: facet {nodes} has no physical tag")
        if phys not in tag_map:
            raise MeshError(f"{path}: physical group {phys} not in tag map {dict(tag_map)}")
        region = tag_map[phys]
        if region not in region_tags:
            raise MeshError(f"{path}: unknown region name {region!r}")
        loc = remap[nodes]
        if np.any(loc < 0):
            raise MeshError(f"{path}: inconsistent element dimensionality: facet {nodes} not on any cell")
        facet_tags[tuple(sorted(int(i) for i in loc))] = region_tags[region]

    present = {name: region_tags[name] for name in set(tag_map.values()) if name in region_tags}
    return build_mesh(vertices, cells, facet_tags, present)


def write_gmsh(mesh: Mesh, path) -> None:
    """Write the mesh as MSH 2.2 ASCII; facet physical ids equal the region tags."""
    dim = mesh.dim
    facet_type, cell_type = (1, 2) if dim == 2 else (2, 4)
    inv = {v: k for k, v in mesh.tags.items()}
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames", str(len(inv) + 1)]
    for tag in sorted(inv):
        out.append(f'{dim - 1} {tag} "{inv[tag]}"')
    out.append(f'{dim} 1 "domain"')
    out += ["$EndPhysicalNames", "$Nodes", str(mesh.num_vertices)]
    for i, x in enumerate(mesh.vertices):
        xyz = list(x) + [0.0] * (3 - dim)
        out.append(f"{i + 1} " + " ".join(repr(float(c)) for c in xyz))
    out += ["$EndNodes", "$Elements", str(len(mesh.boundary_facets) + mesh.num_cells)]
    k = 1
    for f, tag in zip(mesh.boundary_facets, mesh.boundary_markers):
        out.append(f"{k} {facet_type} 2 {tag} {tag} " + " ".join(str(i + 1) for i in f))
        k += 1
    for c in mesh.cells:
        out.append(f"{k} {cell_type} 2 1 1 " + " ".join(str(i + 1) for i in c))
        k += 1
    out.append("$EndElements")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
