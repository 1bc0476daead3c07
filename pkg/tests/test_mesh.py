import numpy as np
import pytest
from numpy.testing import assert_allclose

from newteig.mesh import (Mesh, MeshError, MeshFormatError, build_hierarchy,
                          load_mesh, refine_regular, save_mesh, unit_square_mesh,
                          MeshHierarchy)


def test_unit_square_counts_h_half():
    mesh = unit_square_mesh(1 / 2)
    assert mesh.num_vertices == 9
    assert mesh.num_triangles == 8
    assert mesh.boundary.sum() == 8


def test_unit_square_minimal():
    mesh = unit_square_mesh(1.0)
    assert mesh.num_vertices == 4
    assert mesh.num_triangles == 2
    assert mesh.boundary.sum() == 4


def test_unit_square_counts_formula():
    # (M+1)^2 vertices and 2 M^2 triangles
    mesh = unit_square_mesh(1 / 6)
    assert mesh.num_vertices == 49
    assert mesh.num_triangles == 72


@pytest.mark.parametrize("h", [0.3, -0.5, 0.0, 2.0])
def test_unit_square_rejects_bad_h(h):
    with pytest.raises(ValueError):
        unit_square_mesh(h)


def test_refine_euler_counts():
    # V_new = V + E with E = V + T - 1 for a simply connected triangulation
    coarse = unit_square_mesh(1.0)          # V=4, T=2, E=5
    fine, _ = refine_regular(coarse)
    assert fine.num_vertices == 9
    assert fine.num_triangles == 8

    coarse = unit_square_mesh(1 / 2)        # V=9, T=8, E=16
    fine, _ = refine_regular(coarse)
    assert fine.num_vertices == 25
    assert fine.num_triangles == 32


def test_refine_preserves_area_and_quadruples_triangles():
    mesh = unit_square_mesh(1 / 3)
    for _ in range(3):
        fine, _ = refine_regular(mesh)
        assert fine.num_triangles == 4 * mesh.num_triangles
        assert abs(fine.area() - mesh.area()) <= 1e-12 * mesh.area()
        mesh = fine


def test_prolongation_reproduces_affine():
    mesh = unit_square_mesh(1 / 3)
    fine, prolong = refine_regular(mesh)
    rng = np.random.default_rng(7)
    for _ in range(12):
        a, b, c = rng.standard_normal(3)
        f = lambda x, y: a * x + b * y + c
        coarse_vals = f(mesh.vertices[:, 0], mesh.vertices[:, 1])
        fine_vals = f(fine.vertices[:, 0], fine.vertices[:, 1])
        assert_allclose(prolong.apply(coarse_vals), fine_vals, rtol=0, atol=1e-13)
    assert_allclose(np.asarray(prolong.matrix.sum(axis=1)).ravel(), 1.0,
                    rtol=0, atol=1e-14)


def test_refined_boundary_edges_nest_in_coarse_boundary():
    mesh = unit_square_mesh(1 / 2)
    fine, _ = refine_regular(mesh)
    coarse_edges = mesh.boundary_edges()
    for i, j in fine.boundary_edges():
        a, b = fine.vertices[i], fine.vertices[j]
        inside = False
        for ci, cj in coarse_edges:
            p, q = mesh.vertices[ci], mesh.vertices[cj]
            d = q - p
            length2 = d @ d
            ta = (a - p) @ d / length2
            tb = (b - p) @ d / length2
            off_a = np.linalg.norm(a - (p + ta * d))
            off_b = np.linalg.norm(b - (p + tb * d))
            if (off_a < 1e-12 and off_b < 1e-12
                    and -1e-12 <= ta <= 1 + 1e-12 and -1e-12 <= tb <= 1 + 1e-12):
                inside = True
                break
        assert inside


def test_hierarchy_triangle_counts():
    hier = build_hierarchy(unit_square_mesh(1 / 6), 3)
    assert [m.num_triangles for m in hier.levels] == [72, 288, 1152]


def test_hierarchy_single_level():
    coarse = unit_square_mesh(1 / 4)
    hier = build_hierarchy(coarse, 1)
    assert len(hier) == 1
    assert hier.levels[0] is coarse
    assert hier.prolongations == []


def test_hierarchy_free_dof_counts():
    # interior grid points: (2^k M - 1)^2 for the structured mesh
    hier = build_hierarchy(unit_square_mesh(1 / 2), 3)
    free = [int((~m.boundary).sum()) for m in hier.levels]
    assert free == [1, 9, 49]


def test_hierarchy_h_halves():
    hier = build_hierarchy(unit_square_mesh(1 / 4), 3)
    hs = [m.max_diameter() for m in hier.levels]
    for k in range(2):
        assert_allclose(hs[k] / hs[k + 1], 2.0, rtol=1e-12)


def test_hierarchy_memory_guard():
    with pytest.raises(MeshError, match="cap"):
        build_hierarchy(unit_square_mesh(1 / 6), 8, max_vertices=10_000)


def test_hierarchy_rejects_other_beta():
    coarse = unit_square_mesh(1 / 2)
    fine, prolong = refine_regular(coarse)
    with pytest.raises(ValueError):
        MeshHierarchy([coarse, fine], [prolong], beta=3)


def test_save_load_roundtrip(tmp_path):
    mesh = unit_square_mesh(1 / 2)
    path = tmp_path / "square.mesh"
    save_mesh(mesh, path)
    back = load_mesh(path)
    assert_allclose(back.vertices, mesh.vertices, rtol=0, atol=0)
    assert (back.triangles == mesh.triangles).all()
    assert (back.boundary == mesh.boundary).all()


def test_load_rejects_zero_area_triangle(tmp_path):
    path = tmp_path / "degenerate.mesh"
    path.write_text("mesh2d 4 2\n"
                    "0 0 1\n1 0 1\n0 1 1\n2 0 1\n"
                    "0 1 2\n"
                    "0 1 3\n")   # collinear
    with pytest.raises(MeshError, match="area"):
        load_mesh(path)


def test_load_rejects_out_of_range_index(tmp_path):
    path = tmp_path / "badindex.mesh"
    path.write_text("mesh2d 3 1\n"
                    "0 0 1\n1 0 1\n0 1 1\n"
                    "0 1 9\n")
    with pytest.raises(MeshFormatError, match="triangle 0"):
        load_mesh(path)


def test_load_rejects_inconsistent_flags(tmp_path):
    path = tmp_path / "badflags.mesh"
    path.write_text("mesh2d 3 1\n"
                    "0 0 1\n1 0 1\n0 1 0\n"   # vertex 2 is on the boundary
                    "0 1 2\n")
    with pytest.raises(MeshError, match="boundary flag"):
        load_mesh(path)


def test_load_reports_line_numbers(tmp_path):
    path = tmp_path / "badline.mesh"
    path.write_text("# comment\nmesh2d 3 1\n0 0 1\nnot a number here\n0 1 1\n0 1 2\n")
    with pytest.raises(MeshFormatError, match="line 4"):
        load_mesh(path)


def test_load_allows_comments(tmp_path):
    mesh = unit_square_mesh(1.0)
    path = tmp_path / "comments.mesh"
    save_mesh(mesh, path)
    text = "# header comment\n" + path.read_text().replace(
        "mesh2d", "mesh2d", 1) + "# trailing comment\n"
    path.write_text(text)
    back = load_mesh(path)
    assert back.num_triangles == 2


def test_mesh_rejects_duplicate_vertices():
    with pytest.raises(MeshError, match="coincide"):
        Mesh(vertices=[[0, 0], [1, 0], [0, 1], [1e-15, 0]],
             triangles=[[0, 1, 2], [3, 1, 2]],
             boundary=[True, True, True, True])


def test_mesh_rejects_clockwise_triangle():
    with pytest.raises(MeshError, match="area"):
        Mesh(vertices=[[0, 0], [1, 0], [0, 1]],
             triangles=[[0, 2, 1]],
             boundary=[True, True, True])


def test_mesh_is_immutable():
    mesh = unit_square_mesh(1 / 2)
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 5.0
