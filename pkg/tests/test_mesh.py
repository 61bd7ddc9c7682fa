import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsi.mesh import (FLUID, GAMMA_C, SOLID, MeshError, ReferenceMesh, build_pressure_space, build_space,
                      format_mesh, load_mesh, parse_mesh, tet_quadrature, triangle_quadrature, two_cube_mesh,
                      write_mesh)

UNIT_TET = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])


def bare(vertices, cells):
    return ReferenceMesh(np.asarray(vertices, float), cells, [FLUID] * len(cells), np.zeros((0, 3)), [],
                         validate=False)


@pytest.fixture(scope="module")
def mesh():
    return two_cube_mesh(2)


def test_two_cube_interface_labels(mesh):
    gc = mesh.facets_with(GAMMA_C)
    # 2x2 squares on x = 1, two triangles each
    assert len(gc) == 8
    assert np.allclose(mesh.vertices[mesh.facets[gc]][..., 0], 1.0)
    fc = mesh.facet_cells[gc]
    assert (mesh.cell_region[fc[:, 0]] == FLUID).all()
    assert (mesh.cell_region[fc[:, 1]] == SOLID).all()


def test_volumes_sum_to_box_volume(mesh):
    # independent: the two cubes are [0,2] x [0,1] x [0,1]
    assert mesh.volumes.sum() == pytest.approx(2.0, rel=1e-14)
    assert (mesh.volumes > 0).all()


def test_interface_not_conforming_rejected():
    text = format_mesh(two_cube_mesh(1))
    lines = text.splitlines()
    # relabel one interface facet so that a gamma_c label sits on a fluid boundary face
    idx = next(i for i, ln in enumerate(lines) if ln.endswith("gamma_in"))
    lines[idx] = lines[idx].replace("gamma_in", "gamma_c")
    with pytest.raises(MeshError, match="interface not conforming"):
        parse_mesh("\n".join(lines))


def test_empty_solid_rejected():
    m = two_cube_mesh(1)
    with pytest.raises(MeshError, match="Solid region empty"):
        ReferenceMesh(m.vertices, m.cells, np.zeros(m.ncells, int), m.facets, m.facet_label)


def test_negative_volume_reports_cell():
    m = two_cube_mesh(1)
    cells = m.cells.copy()
    cells[3] = cells[3][[1, 0, 2, 3]]
    with pytest.raises(MeshError, match="cell 3"):
        ReferenceMesh(m.vertices, cells, m.cell_region, m.facets, m.facet_label)


def test_file_round_trip(tmp_path, mesh):
    path = tmp_path / "m.txt"
    write_mesh(mesh, path)
    back = load_mesh(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.cells, mesh.cells)
    assert np.array_equal(back.facet_label, mesh.facet_label)


@pytest.mark.parametrize("text, msg", [
    ("nope\n", "header"),
    ("fsi-mesh v1\nvertices 1\n0 0\n", "expected 3 fields"),
    ("fsi-mesh v1\nvertices 0\ncells 1\n0 1 2 3 liquid\n", "unknown region"),
])
def test_parse_errors(text, msg):
    with pytest.raises(MeshError, match=msg):
        parse_mesh(text)


def test_missing_file(tmp_path):
    with pytest.raises(MeshError, match="cannot read"):
        load_mesh(tmp_path / "absent.txt")


def test_single_tet_dofs():
    assert build_space(bare(UNIT_TET, [[0, 1, 2, 3]]), 1).ndofs == 12


def test_two_tets_sharing_face_dofs():
    verts = np.vstack([UNIT_TET, [1, 1, 1]])
    m = bare(verts, [[0, 1, 2, 3], [1, 2, 3, 4]])
    assert (m.volumes > 0).all()
    assert build_space(m, 1).ndofs == 15


def test_degree_zero_rejected():
    with pytest.raises(ValueError, match="degree"):
        build_space(bare(UNIT_TET, [[0, 1, 2, 3]]), 0)


def test_interface_dofs_shared(mesh):
    space = build_space(mesh, 2)
    gc = mesh.facets_with(GAMMA_C)
    fc = mesh.facet_cells[gc]
    for k in range(len(gc)):
        fnodes = set(space.facet_nodes(gc[k]))
        # both neighbours list the same global node numbers for the shared face
        assert fnodes <= set(space.cell_nodes[fc[k, 0]])
        assert fnodes <= set(space.cell_nodes[fc[k, 1]])
    # P2 nodes on x = 1 in a 2x2 face grid: 5x5
    assert len(space.interface_nodes) == 25


def test_p2_node_count(mesh):
    space = build_space(mesh, 2)
    # structured grid of spacing h/2 on [0,2]x[0,1]^2 plus the face diagonals
    assert space.nnodes == len(np.unique(space.node_coords.round(12), axis=0))
    pspace = build_pressure_space(mesh, 1)
    assert pspace.ndofs == 27


@pytest.mark.parametrize("order", [0, 2, 4, 6])
def test_tet_quadrature_exact(order):
    q = tet_quadrature(order)
    assert q.weights.sum() == pytest.approx(1 / 6, rel=1e-14)
    # int over unit simplex of x^a y^b z^c = a! b! c! / (a+b+c+3)!
    pts = q.points[:, 1:]
    for a in range(order + 1):
        for b in range(order + 1 - a):
            c = order - a - b
            exact = math.factorial(a) * math.factorial(b) * math.factorial(c) / math.factorial(a + b + c + 3)
            val = q.weights @ (pts[:, 0] ** a * pts[:, 1] ** b * pts[:, 2] ** c)
            assert val == pytest.approx(exact, rel=1e-12)


@pytest.mark.parametrize("order", [1, 4, 6])
def test_triangle_quadrature_exact(order):
    q = triangle_quadrature(order)
    assert q.weights.sum() == pytest.approx(0.5, rel=1e-14)
    pts = q.points[:, 1:]
    for a in range(order + 1):
        b = order - a
        exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
        assert q.weights @ (pts[:, 0] ** a * pts[:, 1] ** b) == pytest.approx(exact, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=30, max_size=30))
def test_p2_reproduces_quadratics(coeffs):
    mesh = two_cube_mesh(1)
    space = build_space(mesh, 2)
    c = np.array(coeffs).reshape(3, 10)

    def f(x):
        basis = np.column_stack([np.ones(len(x)), x, x[:, [0]] ** 2, x[:, [1]] ** 2, x[:, [2]] ** 2,
                                 x[:, [0]] * x[:, [1]], x[:, [1]] * x[:, [2]], x[:, [0]] * x[:, [2]]])
        return basis @ c.T

    u = space.interpolate(f)
    q = tet_quadrature(2)
    cells = np.arange(mesh.ncells)
    vals, _ = space.evaluate(cells, q.points, u)
    X = np.einsum("pk,ckd->cpd", q.points, mesh.vertices[mesh.cells])
    assert np.allclose(vals, f(X.reshape(-1, 3)).reshape(vals.shape), atol=1e-12)


def test_translation_keeps_volumes(mesh):
    moved = mesh.translated([3.0, -1.0, 0.5])
    assert np.allclose(moved.volumes, mesh.volumes, rtol=1e-13)
