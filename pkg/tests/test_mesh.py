import numpy as np
import pytest

from stokes_mg.mesh import (BoxPhase, build_hierarchy, build_mesh, coarsen, color_elements,
                            face_adjacency, grid_adjacency)


def _valid(colors, adj):
    i, j = adj
    return np.all(colors[i] != colors[j])


def test_checkerboard_on_even_periodic_grid():
    lv = build_mesh(2, 4, "periodic")
    colors = color_elements(lv, face_adjacency(lv))
    assert colors.max() + 1 == 2
    np.testing.assert_array_equal(colors, lv.coords.sum(axis=1) % 2)


def test_odd_torus_needs_more_than_two_colors():
    lv = build_mesh(2, 3, "periodic")
    adj = face_adjacency(lv)
    colors = color_elements(lv, adj)
    assert colors.max() + 1 > 2
    assert _valid(colors, adj)


def test_diagonal_stencil_coloring_is_valid():
    lv = build_mesh(2, 8, "dirichlet")
    offs = [(1, 0), (0, 1), (1, 1), (1, -1)]
    adj = grid_adjacency(lv, offs)
    colors = color_elements(lv, adj)
    assert _valid(colors, adj)


@pytest.mark.parametrize("d,bc,expected", [(2, "periodic", 2 * 16), (2, "dirichlet", 2 * 12 + 16),
                                           (3, "stress", 3 * 48 + 96)])
def test_face_counts(d, bc, expected):
    lv = build_mesh(d, 4, bc)
    assert lv.num_faces == expected
    assert lv.count_faces("intraphase") == d * 4 ** (d - 1) * (4 if bc == "periodic" else 3)


def test_boundary_faces_present_only_without_periodicity():
    per = build_mesh(2, 4, "periodic")
    dir_ = build_mesh(2, 4, "dirichlet")
    assert not np.any(per.face_plus < 0)
    assert np.sum(dir_.face_plus < 0) == 16


def test_coarsen_parent_map_and_phase():
    lv = build_mesh(2, 8, "dirichlet", BoxPhase())
    coarse, parent = coarsen(lv)
    assert coarse.n == 4
    np.testing.assert_array_equal(np.bincount(parent), np.full(16, 4))
    # the box aligns with the 4-cell grid, so phases are inherited exactly
    np.testing.assert_array_equal(coarse.phase[parent], lv.phase)


def test_hierarchy_depth():
    h = build_hierarchy(build_mesh(3, 8, "periodic"))
    assert [lv.n for lv in h.levels] == [8, 4, 2, 1]
    assert len(h.parents) == 3


def test_box_phase_alignment():
    BoxPhase().check_aligned(4)
    with pytest.raises(ValueError):
        BoxPhase().check_aligned(2)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        build_mesh(4, 2, "periodic")
    with pytest.raises(ValueError):
        build_mesh(2, 2, "slip")
