import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipshape.direction import spectral_norms
from lipshape.mesh import (
    EmbeddedDomain,
    MeshError,
    Rectangle,
    TriMesh,
    deform,
    disk_mesh,
    element_gradients,
    holdall_square_domain,
    min_angles,
    read_mesh,
    refine_congruent,
    refine_domain,
    signed_areas,
    snap_to_circle,
    tensor_mesh,
    unit_square_mesh,
    write_mesh,
    write_vtk,
)


def test_square_counts():
    m = unit_square_mesh(1.0, 2)
    assert (m.n_vertices, m.n_triangles, len(m.boundary_edges)) == (9, 8, 8)


def test_square_area_and_orientation():
    m = unit_square_mesh(0.75, 16)
    assert abs(m.area - 2.25) <= 1e-12
    assert np.all(signed_areas(m.vertices, m.triangles) > 0)


def test_square_single_loop_ccw():
    m = unit_square_mesh(1.0, 4)
    assert len(m.loops) == 1
    assert abs(m.perimeter - 8.0) < 1e-12
    loop = m.vertices[m.loops[0]]
    q = np.roll(loop, -1, axis=0)
    assert 0.5 * np.sum(loop[:, 0] * q[:, 1] - q[:, 0] * loop[:, 1]) > 0


def test_criss_cross_layout():
    m = unit_square_mesh(1.0, 2)
    # row-major vertices, first two triangles split the lower-left cell along its diagonal
    assert np.allclose(m.vertices[:3], [[-1, -1], [0, -1], [1, -1]])
    assert m.triangles[:2].tolist() == [[0, 1, 4], [0, 4, 3]]


@pytest.mark.parametrize("n", [0, 1])
def test_square_rejects_small_n(n):
    with pytest.raises(MeshError):
        unit_square_mesh(1.0, n)


def test_square_rejects_too_wide():
    with pytest.raises(MeshError):
        unit_square_mesh(2.0, 4)


def test_conformity():
    m = unit_square_mesh(1.0, 5)
    e = m.edges
    counts = np.bincount(m.triangle_edges.ravel(), minlength=len(e))
    assert set(np.unique(counts)) <= {1, 2}
    assert np.sum(counts == 1) == len(m.boundary_edges)


def test_disk_mesh_geometry():
    m = disk_mesh(1.0, 6)
    m.validate()
    assert m.n_vertices == 1 + 3 * 6 * 7
    assert len(m.loops) == 1
    r = np.linalg.norm(m.vertices[m.boundary_vertices], axis=1)
    assert np.allclose(r, 1.0)
    # regular 36-gon area
    assert abs(m.area - 0.5 * 36 * np.sin(2 * np.pi / 36)) < 1e-12


def test_deform_zero_field_is_identity():
    m = unit_square_mesh(1.0, 4)
    out = deform(m, np.zeros_like(m.vertices), 0.5)
    assert np.array_equal(out.vertices, m.vertices)
    assert np.array_equal(out.triangles, m.triangles)


def test_deform_translation_patch():
    m = unit_square_mesh(1.0, 8)
    V = np.zeros_like(m.vertices)
    patch = np.max(np.abs(m.vertices), axis=1) <= 0.5
    V[patch] = [0.3, -0.2]
    out = deform(m, V, 0.1)
    assert np.array_equal(out.vertices[patch], m.vertices[patch] + 0.1 * np.array([0.3, -0.2]))


def _bubble(m):
    x = m.vertices
    V = np.column_stack([(1 - x[:, 0] ** 2) * (1 - x[:, 1] ** 2), np.sin(np.pi * x[:, 0]) * (1 - x[:, 1] ** 2)])
    return V / spectral_norms(element_gradients(m, V)).max()


def test_deform_area_bound_with_unit_field():
    m = unit_square_mesh(1.0, 12)
    V = _bubble(m)
    assert abs(spectral_norms(element_gradients(m, V)).max() - 1.0) < 1e-12
    out = deform(m, V, 0.25)
    assert out.areas.min() >= (1 - 0.25) ** 2 * m.areas.min()
    assert np.all(out.areas >= (1 - 0.25) ** 2 * m.areas * (1 - 1e-12))


def test_det_bound_brute_force():
    # det(I + tA) >= (1 - t)^2 for |A|_2 <= 1, t <= 1/2
    rng = np.random.default_rng(0)
    A = rng.normal(size=(20000, 2, 2))
    A /= spectral_norms(A)[:, None, None] * rng.uniform(1.0, 3.0, size=(20000, 1, 1))
    for t in (0.5, 0.25, 0.01):
        d = np.linalg.det(np.eye(2) + t * A)
        assert np.all(d >= (1 - t) ** 2 - 1e-14)


def test_deform_inversion_reported():
    m = unit_square_mesh(1.0, 4)
    V = np.zeros_like(m.vertices)
    V[m.boundary_vertices] = -10.0 * m.vertices[m.boundary_vertices]
    with pytest.raises(MeshError, match="inverted"):
        deform(m, V, 0.5)


def test_deform_preserves_loops():
    m = unit_square_mesh(1.0, 6)
    out = deform(m, _bubble(m), 0.5)
    assert len(out.loops) == len(m.loops)


def test_refine_counts_and_areas():
    m = disk_mesh(1.0, 3)
    fine, _, parent = refine_congruent(m)
    assert fine.n_triangles == 4 * m.n_triangles
    assert fine.n_vertices == m.n_vertices + len(m.edges)
    assert abs(fine.area - m.area) < 1e-12
    child_sum = np.bincount(parent, fine.areas)
    assert np.allclose(child_sum, m.areas, rtol=0, atol=1e-14)
    assert np.all(signed_areas(fine.vertices, fine.triangles) > 0)
    assert len(fine.boundary_edges) == 2 * len(m.boundary_edges)


def test_refine_carries_linear_field_exactly():
    m = unit_square_mesh(1.0, 3)
    A = np.array([[1.5, -0.3], [0.2, 0.7]])
    b = np.array([0.1, -2.0])
    f = m.vertices @ A.T + b
    fine, (g,), _ = refine_congruent(m, [f])
    assert np.allclose(g, fine.vertices @ A.T + b, atol=1e-14)


def test_refine_domain_inherits_marker():
    dom = holdall_square_domain(1.0, 4)
    fine, (none,) = refine_domain(dom, [None])
    assert none is None
    assert abs(fine.omega.area - dom.omega.area) < 1e-12
    assert fine.mesh.n_triangles == 4 * dom.mesh.n_triangles


def test_element_gradients_identity_and_shear():
    m = unit_square_mesh(1.0, 3)
    G = element_gradients(m, m.vertices)
    assert np.allclose(G, np.eye(2), atol=1e-14)
    S = element_gradients(m, np.column_stack([m.vertices[:, 1], np.zeros(m.n_vertices)]))
    assert np.allclose(S, [[0, 1], [0, 0]], atol=1e-14)


def test_element_gradients_random_linear():
    rng = np.random.default_rng(1)
    m = disk_mesh(1.0, 4)
    for _ in range(10):
        A = rng.normal(size=(2, 2))
        G = element_gradients(m, m.vertices @ A.T)
        assert np.max(np.abs(G - A)) <= 1e-13


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**31 - 1))
def test_element_gradients_linear_in_field(a, b, seed):
    rng = np.random.default_rng(seed)
    m = unit_square_mesh(1.0, 3)
    F, G = rng.normal(size=(2, m.n_vertices, 2))
    lhs = element_gradients(m, a * F + b * G)
    rhs = a * element_gradients(m, F) + b * element_gradients(m, G)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_mesh_io_round_trip(tmp_path):
    m = disk_mesh(1.3, 3)
    m = m.with_vertices(m.vertices + 1e-3 * np.sin(7 * m.vertices))
    write_mesh(m, tmp_path / "m.txt")
    back = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    first = (tmp_path / "m.txt").read_text().splitlines()[0]
    assert first == f"{m.n_vertices} {m.n_triangles} {len(m.boundary_edges)}"


def test_mesh_io_rejects_inconsistent_boundary(tmp_path):
    m = unit_square_mesh(1.0, 2)
    write_mesh(m, tmp_path / "m.txt")
    lines = (tmp_path / "m.txt").read_text().splitlines()
    lines[-1] = "0 8"
    (tmp_path / "m.txt").write_text("\n".join(lines))
    with pytest.raises(MeshError):
        read_mesh(tmp_path / "m.txt")


def test_vtk_writer(tmp_path):
    m = unit_square_mesh(1.0, 2)
    write_vtk(m, tmp_path / "m.vtk", point_data={"u": np.arange(9.0), "V": np.ones((9, 2))}, cell_data={"c": np.zeros(8)})
    text = (tmp_path / "m.vtk").read_text().splitlines()
    assert text[0] == "# vtk DataFile Version 3.0"
    assert "DATASET UNSTRUCTURED_GRID" in text
    assert "POINTS 9 double" in text and "CELLS 8 32" in text and "CELL_TYPES 8" in text
    i = text.index("CELL_TYPES 8")
    assert text[i + 1 : i + 9] == ["5"] * 8
    assert "POINT_DATA 9" in text and "SCALARS u double 1" in text and "VECTORS V double" in text
    assert "CELL_DATA 8" in text


def test_snap_to_circle():
    m = disk_mesh(1.0, 2)
    fine, _, _ = refine_congruent(m)
    snapped = snap_to_circle(fine, 1.0)
    r = np.linalg.norm(snapped.vertices[snapped.boundary_vertices], axis=1)
    assert np.allclose(r, 1.0, atol=1e-15)


def test_embedded_domain_fixed_vertices_on_holdall_boundary():
    dom = holdall_square_domain(0.75, 6)
    hd = dom.mesh.holdall
    assert np.all(hd.on_boundary(dom.mesh.vertices[dom.fixed_vertices]))
    assert abs(dom.omega.area - 2.25) < 1e-12
    assert dom.omega.boundary_vertices.size == 24


def test_min_angles_right_isoceles():
    m = TriMesh(np.array([[0.0, 0], [1, 0], [0, 1]]), np.array([[0, 1, 2]]), Rectangle(0, 1, 0, 1))
    assert np.isclose(min_angles(m)[0], np.pi / 4)


def test_tensor_mesh_non_uniform():
    m = tensor_mesh(np.array([-2, -1, 0.5, 2.0]), np.array([-2, 0, 2.0]))
    assert abs(m.area - 16.0) < 1e-12
    assert isinstance(EmbeddedDomain(m, np.ones(m.n_triangles, bool)).omega, TriMesh)
