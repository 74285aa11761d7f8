import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_interior_points
from oslc_sl.mesh import (
    DegenerateSimplexError,
    GridFunction,
    Mesh,
    MeshError,
    OutsideHullError,
    TriangleParseError,
    barycentric,
    box_mesh_for_dx,
    build_box_mesh,
    build_interval_mesh,
    import_triangle_mesh,
    interpolate,
    read_triangle_files,
    write_triangle_files,
)

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@pytest.mark.parametrize(
    "point, expected",
    [((0.0, 0.0), (1, 0, 0)), ((1 / 3, 1 / 3), (1 / 3, 1 / 3, 1 / 3)), ((0.5, 0.25), (0.25, 0.5, 0.25))],
)
def test_barycentric_reference_triangle(point, expected):
    np.testing.assert_allclose(barycentric(REF, point), expected, atol=1e-15)
    mesh = Mesh(REF, [[0, 1, 2]])
    np.testing.assert_allclose(mesh.barycentric_coords(0, point), expected, atol=1e-15)


def test_barycentric_outside_is_negative():
    lam = barycentric(REF, (1.0, 1.0))
    assert lam.min() < 0 and abs(lam.sum() - 1) < 1e-15


def test_degenerate_simplex_rejected():
    with pytest.raises(DegenerateSimplexError):
        barycentric([[0, 0], [1, 1], [2, 2]], (0.5, 0.5))
    with pytest.raises(DegenerateSimplexError):
        Mesh([[0, 0], [1, 1], [2, 2]], [[0, 1, 2]])


def test_locate_vertex_deterministic_and_outside():
    mesh = build_box_mesh((0, 1, 0, 1), 0.02)
    v = mesh.vertices[20]
    first = mesh.locate(v)
    assert first is not None and 20 in mesh.simplices[first]
    assert all(mesh.locate(v) == first for _ in range(3))
    assert mesh.locate((1.5, 0.5)) is None
    assert mesh.locate_with_coords((-0.1, 0.2)) is None


def test_locate_shared_edge_lowest_id():
    # two triangles sharing the edge x = y of the unit square
    mesh = Mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])
    assert mesh.locate((0.5, 0.5)) == 0
    swapped = Mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 2, 3], [0, 1, 2]])
    assert swapped.locate((0.5, 0.5)) == 0


def test_interpolate_affine_and_basis(rng):
    mesh = box_mesh_for_dx((-1, 1, -1, 1), 0.2)
    f = GridFunction.sample(mesh, lambda x: 2 * x[:, 0] + 3)
    pts = random_interior_points(mesh, 200, rng)
    np.testing.assert_allclose(f(pts), 2 * pts[:, 0] + 3, rtol=1e-12)
    i = 17
    e = np.zeros(mesh.n_vertices)
    e[i] = 1.0
    s, lam = mesh.locate_many(pts)
    beta = np.where(mesh.simplices[s] == i, lam, 0.0).sum(axis=1)
    np.testing.assert_allclose(mesh.interpolate(e, pts), beta, atol=1e-15)


def test_interpolate_quadratic_error_1d():
    mesh = build_interval_mesh(0, 1, 10)
    f = GridFunction.sample(mesh, lambda x: x[:, 0] ** 2)
    x = np.linspace(0, 1, 100001)
    err = np.max(np.abs(f(x) - x**2))
    assert err <= 0.0025 + 1e-15


def test_interpolate_outside_raises():
    mesh = build_interval_mesh(0, 1, 4)
    f = GridFunction.sample(mesh, lambda x: x[:, 0])
    with pytest.raises(OutsideHullError) as info:
        interpolate(f, 1.5)
    assert info.value.point.tolist() == [1.5]
    assert interpolate(f, 0.3) == pytest.approx(0.3)


def test_builders():
    m = build_interval_mesh(0, 1, 4)
    np.testing.assert_allclose(m.vertices[:, 0], [0, 0.25, 0.5, 0.75, 1])
    assert m.n_simplices == 4 and m.dx == pytest.approx(0.25)
    with pytest.raises(MeshError):
        build_interval_mesh(0, 1, 0)
    b = build_box_mesh((0, 1, 0, 1), 0.5)
    assert b.volumes.max() <= 0.5 and b.volumes.sum() == pytest.approx(1.0)
    with pytest.raises(MeshError):
        build_box_mesh((0, 1, 0, 1), 0.0)
    assert box_mesh_for_dx((0, 1, 0, 1), 0.1).dx <= 0.1 + 1e-12


def test_grid_function_validation():
    mesh = build_interval_mesh(0, 1, 2)
    with pytest.raises(ValueError):
        GridFunction(mesh, [1.0, 2.0])
    with pytest.raises(ValueError):
        GridFunction(mesh, [1.0, np.nan, 2.0])


def test_hull_projection_matches_brute_force(rng):
    mesh = box_mesh_for_dx((-1, 1, -2, 2), 0.3)
    pts = rng.uniform(-3, 3, size=(300, 2))
    pts = pts[~mesh.contains(pts)]
    proj, simplex, lam = mesh.project_to_hull(pts)
    clipped = np.clip(pts, [-1, -2], [1, 2])
    np.testing.assert_allclose(proj, clipped, atol=1e-12)
    np.testing.assert_allclose(np.einsum("nk,nkd->nd", lam, mesh.vertices[mesh.simplices[simplex]]), clipped, atol=1e-12)
    m1 = build_interval_mesh(0, 1, 5)
    p1, _, _ = m1.project_to_hull([[-0.5], [1.7]])
    np.testing.assert_allclose(p1[:, 0], [0, 1])


def test_lumped_areas_and_csv(tmp_path):
    mesh = build_box_mesh((0, 2, 0, 1), 0.05)
    assert mesh.lumped_areas().sum() == pytest.approx(2.0)
    mesh.to_csv(tmp_path)
    head = (tmp_path / "vertices.csv").read_text().splitlines()[0]
    assert head == "id,x,y"
    assert (tmp_path / "simplices.csv").read_text().splitlines()[0] == "id,v0,v1,v2"


# -- Triangle import ---------------------------------------------------------

NODE = b"# three nodes\n3 2 0 0\n1 0.0 0.0\n2 1.0 0.0\n3 0.0 1.0\n"
ELE = b"1 3 0\n1 1 2 3\n"


def test_triangle_minimal_pair():
    mesh = import_triangle_mesh(NODE, ELE)
    assert mesh.n_vertices == 3 and mesh.n_simplices == 1
    np.testing.assert_array_equal(mesh.simplices, [[0, 1, 2]])


def test_triangle_zero_based():
    node = b"3 2 0 0\n0 0 0\n1 1 0\n2 0 1\n"
    ele = b"1 3 0\n0 0 1 2\n"
    np.testing.assert_array_equal(import_triangle_mesh(node, ele).simplices, [[0, 1, 2]])


def test_triangle_bad_reference_names_line():
    with pytest.raises(TriangleParseError) as info:
        import_triangle_mesh(NODE, b"1 3 0\n1 1 2 99\n")
    assert info.value.line == 2 and ".ele" in str(info.value)


@pytest.mark.parametrize(
    "node, ele",
    [
        (b"x 2 0 0\n", ELE),
        (b"4 2 0 0\n1 0 0\n2 1 0\n3 0 1\n", ELE),
        (NODE, b"2 3 0\n1 1 2 3\n"),
        (b"3 2 0 0\n1 0 0\n2 1\n3 0 1\n", ELE),
    ],
)
def test_triangle_malformed(node, ele):
    with pytest.raises(TriangleParseError):
        import_triangle_mesh(node, ele)


def test_triangle_fixture_unit_square(data_dir):
    mesh = read_triangle_files(data_dir / "unit_square.node", data_dir / "unit_square.ele")
    assert np.all(mesh.volumes > 0)
    assert mesh.volumes.sum() == pytest.approx(1.0, abs=1e-14)
    lo, hi = mesh.bbox
    np.testing.assert_allclose(lo, [0, 0])
    np.testing.assert_allclose(hi, [1, 1])


def test_triangle_round_trip(tmp_path, data_dir):
    mesh = read_triangle_files(data_dir / "test2_domain.node", data_dir / "test2_domain.ele")
    write_triangle_files(mesh, tmp_path / "copy")
    again = read_triangle_files(tmp_path / "copy.node", tmp_path / "copy.ele")
    np.testing.assert_array_equal(again.vertices, mesh.vertices)
    np.testing.assert_array_equal(again.simplices, mesh.simplices)
    assert mesh.volumes.max() <= 0.08 + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.99, 0.99), st.floats(-0.99, 0.99))
def test_partition_of_unity_property(x, y):
    mesh = box_mesh_for_dx((-1, 1, -1, 1), 0.37)
    ev = mesh.locate_with_coords((x, y))
    assert ev is not None
    assert abs(ev.coords.sum() - 1) <= 1e-12
    assert ev.coords.min() >= -mesh.tol
    rebuilt = ev.coords @ mesh.vertices[mesh.simplices[ev.simplex]]
    assert np.linalg.norm(rebuilt - (x, y)) <= 1e-10 * (1 + np.hypot(x, y))
