import numpy as np
import pytest

from stefanlqr.mesh import (
    MeshError,
    TangleError,
    build_rect_mesh,
    dump_mesh,
    interface_deviation,
    mesh_quality,
    move_mesh,
    total_area,
    triangle_areas,
)


def test_counts_tiny():
    m = build_rect_mesh(1, 2, 0.5)
    assert m.n_vertices == 6
    assert m.n_triangles == 4
    assert len(m.interface_chain) == 2


def test_counts_desk_scale():
    m = build_rect_mesh(20, 40, 0.5)
    assert m.n_vertices == 861
    assert m.n_triangles == 1600


def test_counts_documented_fine_scale():
    # fine vertical resolution configuration documented in the README
    m = build_rect_mesh(6, 556, 0.5)
    assert m.n_vertices == 3899


def test_positive_orientation_and_area():
    m = build_rect_mesh(7, 10, 0.5)
    areas = triangle_areas(m.vertices, m.triangles)
    assert np.all(areas > 0)
    assert abs(total_area(m) - 0.5) <= 1e-12


def test_interface_row_and_phases():
    m = build_rect_mesh(4, 8, 0.25)
    y = m.vertices[m.interface_chain, 1]
    np.testing.assert_allclose(y, 0.25)
    centroids = m.vertices[m.triangles].mean(axis=1)
    solid = m.phase == 0
    assert np.all(centroids[solid, 1] < 0.25)
    assert np.all(centroids[~solid, 1] > 0.25)


def test_off_grid_interface_rejected():
    with pytest.raises(MeshError):
        build_rect_mesh(4, 8, 0.3)


def test_odd_ny_rejected():
    with pytest.raises(MeshError):
        build_rect_mesh(4, 7, 0.5)


def test_boundary_marker_partition():
    m = build_rect_mesh(6, 12, 0.5)
    # bottom + top + two sides, each facet marked exactly once
    assert len(m.boundary_facets) == 2 * 6 + 2 * 12
    assert len(m.boundary_markers) == len(m.boundary_facets)
    cool = [mk for mk in m.boundary_markers if mk.startswith("GammaCool")]
    heat = [mk for mk in m.boundary_markers if mk.startswith("GammaU")]
    assert len(cool) == 6          # whole bottom edge
    assert len(heat) == 6          # whole top edge (default layout)
    assert set(heat) == {f"GammaU-{k}" for k in range(1, 7)}
    assert set(cool) == {"GammaCool-1", "GammaCool-2"}


def test_move_zero_displacement_identity():
    m = build_rect_mesh(5, 8, 0.5)
    m2 = move_mesh(m, np.zeros_like(m.vertices), 0.1)
    assert np.array_equal(m2.vertices, m.vertices)
    assert m2.triangles is m.triangles


def test_move_interface_shift_with_decay():
    m = build_rect_mesh(8, 16, 0.5)
    disp = np.zeros_like(m.vertices)
    # vertical shift largest at the interface, decaying linearly to the
    # fixed top/bottom boundaries
    y = m.vertices[:, 1]
    disp[:, 1] = 0.01 * np.where(y <= 0.5, y / 0.5, (1.0 - y) / 0.5)
    m2 = move_mesh(m, disp, 1.0)
    np.testing.assert_allclose(m2.vertices[m2.interface_chain, 1], 0.51)
    assert np.all(m2.vertices[y == 0.0, 1] == 0.0)
    assert np.all(m2.vertices[y == 1.0, 1] == 1.0)
    assert abs(total_area(m2) - 0.5) <= 1e-12
    assert len(m2.interface_chain) == len(m.interface_chain)


def test_move_tangling_detected():
    m = build_rect_mesh(3, 4, 0.5)
    disp = np.zeros_like(m.vertices)
    disp[m.interface_chain, 1] = 1.0  # smash interface row into the top
    with pytest.raises(TangleError):
        move_mesh(m, disp, 1.0)


def test_quality_right_isoceles():
    m = build_rect_mesh(4, 8, 0.5)
    min_area, min_angle = mesh_quality(m)
    np.testing.assert_allclose(min_angle, 45.0, atol=1e-9)
    np.testing.assert_allclose(min_area, 0.5 * (0.5 / 4) * (1.0 / 8))


def test_quality_matches_brute_force():
    rng = np.random.default_rng(8)
    m = build_rect_mesh(5, 6, 0.5)
    disp = 0.02 * rng.standard_normal(m.vertices.shape)
    boundary = ((m.vertices[:, 0] == 0) | (m.vertices[:, 0] == 0.5)
                | (m.vertices[:, 1] == 0) | (m.vertices[:, 1] == 1))
    disp[boundary] = 0.0
    m2 = move_mesh(m, disp, 1.0)
    min_area, min_angle = mesh_quality(m2)
    # brute force
    best_area, best_angle = np.inf, np.inf
    for tri in m2.triangles:
        p = m2.vertices[tri]
        u01, u02 = p[1] - p[0], p[2] - p[0]
        a = 0.5 * abs(u01[0] * u02[1] - u01[1] * u02[0])
        best_area = min(best_area, a)
        for k in range(3):
            u = p[(k + 1) % 3] - p[k]
            v = p[(k + 2) % 3] - p[k]
            ang = np.degrees(np.arccos(np.dot(u, v)
                                       / (np.linalg.norm(u) * np.linalg.norm(v))))
            best_angle = min(best_angle, ang)
    np.testing.assert_allclose(min_area, best_area, rtol=1e-12)
    np.testing.assert_allclose(min_angle, best_angle, rtol=1e-9)


def test_interface_deviation_zero():
    m = build_rect_mesh(6, 8, 0.5)
    d = interface_deviation(m, 0.5)
    assert d.gamma_delta == 0.0


def test_interface_deviation_uniform_offset():
    m = build_rect_mesh(6, 8, 0.5)
    d = interface_deviation(m, lambda x: 0.5 - 0.004)
    np.testing.assert_allclose(d.gamma_delta, -0.004)


def test_interface_deviation_bump_matches_scan():
    m = build_rect_mesh(10, 8, 0.5)
    ref = lambda x: 0.5 + 0.01 * np.sin(2 * np.pi * x)
    d = interface_deviation(m, ref)
    xs = m.vertices[m.interface_chain, 0]
    ys = m.vertices[m.interface_chain, 1]
    diffs = np.array([ref(x) for x in xs]) - ys
    k = int(np.argmax(np.abs(diffs)))
    assert d.x_star == xs[k]
    assert d.gamma_delta == diffs[k]


def test_dump_deterministic():
    m = build_rect_mesh(3, 4, 0.5)
    text = dump_mesh(m)
    assert text.startswith("vertices 20 triangles 24\n")
    assert text == dump_mesh(m)
