import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wssfem.mesh import (
    DEFAULT_TAGS,
    MeshError,
    RegionTags,
    build_mesh,
    circumdiameters,
    facet_normal,
    generate_cylinder,
    generate_unit_square,
    parse_tag_map,
    read_gmsh,
    write_gmsh,
)


def test_square_counts():
    m = generate_unit_square(8)
    assert m.num_vertices == 81
    assert m.num_cells == 128


def test_single_square_circumdiameter():
    m = generate_unit_square(1)
    np.testing.assert_allclose(m.h_cell, math.sqrt(2), rtol=0, atol=1e-15)


def test_square_area_and_perimeter():
    m = generate_unit_square(16)
    assert abs(m.cell_volumes.sum() - 1.0) <= 1e-14
    assert abs(m.boundary_areas.sum() - 4.0) <= 1e-14


def test_refinement_halves_h():
    for n in (2, 4, 8, 16):
        h1 = generate_unit_square(n).h_cell.max()
        h2 = generate_unit_square(2 * n).h_cell.max()
        assert abs(h1 / 2 - h2) <= 1e-14


def test_circumdiameter_equilateral_and_regular_tet():
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
    assert circumdiameters(tri, np.array([[0, 1, 2]]))[0] == pytest.approx(2 / math.sqrt(3), abs=1e-14)
    # regular tetrahedron with edge a: R = a sqrt(6) / 4
    tet = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    a = 2 * math.sqrt(2)
    assert circumdiameters(tet, np.array([[0, 1, 2, 3]]))[0] == pytest.approx(a * math.sqrt(6) / 2, rel=1e-14)


def test_square_normals():
    m = generate_unit_square(4)
    top = m.facets_with("top")
    for f in top:
        np.testing.assert_allclose(facet_normal(m, f), [0.0, 1.0], atol=1e-15)


def test_orientation_positive():
    for m in (generate_unit_square(5), generate_cylinder(1e-3, 2e-3, 12, 3)):
        assert np.all(m.detj > 0)


def test_topology_counts():
    m = generate_cylinder(1.0, 2.0, 12, 4)
    nf = m.dim + 1
    # every cell facet is either one boundary facet or one side of an interior facet
    assert len(m.boundary_facets) + 2 * len(m.interior_facets) == nf * m.num_cells
    assert m.interior_cells.shape == (len(m.interior_facets), 2)
    assert np.all(m.interior_cells[:, 0] != m.interior_cells[:, 1])
    keys = np.sort(np.concatenate([m.boundary_facets, m.interior_facets]), axis=1)
    assert len(np.unique(keys, axis=0)) == len(keys)


def test_cylinder_inlet_area_and_normals():
    R, L = 1e-3, 2e-3
    areas = []
    for nc in (12, 24, 48):
        m = generate_cylinder(R, L, nc, 2)
        inlet = m.facets_with("inlet")
        areas.append(m.boundary_areas[inlet].sum())
        np.testing.assert_allclose(m.boundary_normals[inlet], np.tile([0, 0, -1.0], (len(inlet), 1)), atol=1e-14)
        wall = m.facets_with("wall")
        assert np.abs(m.boundary_normals[wall][:, 2]).max() <= 1e-12
        # wall vertices on the cylinder surface
        wv = np.unique(m.boundary_facets[wall])
        np.testing.assert_allclose(np.hypot(*m.vertices[wv, :2].T), R, rtol=1e-12)
        # lateral normal close to the radial direction
        c = m.vertices[m.boundary_facets[wall]].mean(axis=1)
        radial = c[:, :2] / np.hypot(*c[:, :2].T)[:, None]
        assert np.abs(m.boundary_normals[wall][:, :2] - radial).max() < 2 * math.pi / nc
    assert all(a < math.pi * R**2 for a in areas)
    assert areas[0] < areas[1] < areas[2]


def _flux_of_constant(m, c):
    return np.einsum("f,fk,k->", m.boundary_areas, m.boundary_normals, c)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 12), st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_divergence_theorem_square(n, c):
    m = generate_unit_square(n)
    assert abs(_flux_of_constant(m, np.array(c))) <= 1e-12 * m.boundary_areas.sum()


@settings(max_examples=10, deadline=None)
@given(st.integers(6, 20), st.integers(1, 4), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_divergence_theorem_cylinder(nc, na, c):
    m = generate_cylinder(1e-3, 2e-3, nc, na)
    # normalised by the surface area: magnitudes here are ~1e-6
    assert abs(_flux_of_constant(m, np.array(c))) <= 1e-12 * m.boundary_areas.sum()


def test_every_boundary_facet_tagged():
    m = generate_unit_square(3)
    assert set(m.boundary_markers.tolist()) == {DEFAULT_TAGS.left, DEFAULT_TAGS.right, DEFAULT_TAGS.bottom, DEFAULT_TAGS.top}
    m = generate_cylinder(1.0, 1.0, 6, 1)
    assert set(m.boundary_markers.tolist()) == {1, 2, 3}


def test_region_tags_distinct():
    with pytest.raises(MeshError):
        RegionTags(inlet=1, outlet=1)


def test_generator_errors():
    with pytest.raises(MeshError):
        generate_unit_square(0)
    with pytest.raises(MeshError):
        generate_cylinder(1.0, 1.0, 5, 1)


def test_degenerate_cell_named():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    with pytest.raises(MeshError, match="degenerate cell 1"):
        build_mesh(v, [[0, 1, 3], [0, 1, 2]], lambda c, n: np.ones(len(c), int), {"wall": 1})


def test_missing_marker():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(MeshError, match="no region tag"):
        build_mesh(v, [[0, 1, 2]], {(0, 1): 3}, {"wall": 3})


def test_dimension_mismatch():
    with pytest.raises(MeshError, match="dimensionality"):
        build_mesh(np.zeros((4, 3)), [[0, 1, 2]], lambda c, n: np.ones(len(c), int), {})


def test_unknown_region():
    with pytest.raises(MeshError, match="unknown region"):
        generate_unit_square(2).facets_with("inlet")


# -- gmsh ----------------------------------------------------------------

ONE_TET = """$MeshFormat
2.2 0 8
$EndMeshFormat
$PhysicalNames
3
2 1 "inlet"
2 2 "outlet"
2 3 "wall"
$EndPhysicalNames
$Nodes
4
1 0 0 0
2 1 0 0
3 0 1 0
4 0 0 1
$EndNodes
$Elements
5
1 2 2 1 1 1 2 3
2 2 2 2 2 1 2 4
3 2 2 3 3 1 3 4
4 2 2 3 3 2 3 4
5 4 2 9 1 1 2 3 4
$EndElements
"""


def test_read_one_tet(tmp_path):
    p = tmp_path / "tet.msh"
    p.write_text(ONE_TET)
    m = read_gmsh(p)
    assert m.num_cells == 1
    assert len(m.boundary_facets) == 4
    assert len(m.interior_facets) == 0
    names = {v: k for k, v in m.tags.items()}
    assert sorted(names[t] for t in m.boundary_markers) == ["inlet", "outlet", "wall", "wall"]


def test_read_with_tag_map(tmp_path):
    p = tmp_path / "tet.msh"
    p.write_text(ONE_TET)
    m = read_gmsh(p, parse_tag_map("1=inlet,2=outlet,3=wall"))
    assert set(m.boundary_markers.tolist()) <= {m.tags["inlet"], m.tags["outlet"], m.tags["wall"]}
    assert parse_tag_map('{"1": "inlet"}') == {1: "inlet"}


def test_unsupported_version(tmp_path):
    p = tmp_path / "v4.msh"
    p.write_text(ONE_TET.replace("2.2 0 8", "4.1 0 8"))
    with pytest.raises(MeshError, match="version"):
        read_gmsh(p)


def test_untagged_facet(tmp_path):
    p = tmp_path / "bad.msh"
    lines = ONE_TET.splitlines()
    lines = [ln for ln in lines if not ln.startswith("4 2 2 3 3")]
    lines[lines.index("5")] = "4"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(MeshError):
        read_gmsh(p)


@pytest.mark.parametrize("make", [lambda: generate_unit_square(4), lambda: generate_cylinder(1e-3, 2e-3, 12, 2)])
def test_gmsh_round_trip(tmp_path, make):
    m = make()
    p = tmp_path / "m.msh"
    write_gmsh(m, p)
    r = read_gmsh(p)
    assert r.num_vertices == m.num_vertices
    assert r.num_cells == m.num_cells
    np.testing.assert_array_equal(r.vertices, m.vertices)
    np.testing.assert_array_equal(np.sort(r.cells, axis=1), np.sort(m.cells, axis=1))
    names_m = {v: k for k, v in m.tags.items()}
    names_r = {v: k for k, v in r.tags.items()}
    key = lambda mesh, names: sorted(
        (tuple(sorted(f)), names[t]) for f, t in zip(mesh.boundary_facets.tolist(), mesh.boundary_markers.tolist())
    )
    assert key(r, names_r) == key(m, names_m)
