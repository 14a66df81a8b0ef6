import numpy as np
import pytest

from diver.grid import (
    SENTINEL,
    GridDims,
    build_grid,
    build_octree,
    corner_features,
    cull,
    vertex_activity,
)
from diver.integrator import CORNER_OFFSETS, chi_all


def test_single_voxel_activates_its_corners():
    g = build_grid(GridDims(2, 2, 2), 4, [(0, 0, 0)])
    assert g.n_active_vertices == 8
    assert g.feature_pool.shape == (8, 4)
    assert g.n_occupied == 1


def test_adjacent_voxels_share_a_face():
    g = build_grid(GridDims(2, 2, 2), 4, [(0, 0, 0), (1, 0, 0)])
    assert g.n_active_vertices == 12


def test_empty_grid():
    g = build_grid(GridDims(1, 1, 1), 4, [])
    assert g.n_active_vertices == 0
    assert np.all(g.vertex_index == SENTINEL)


def test_out_of_range_and_duplicates_rejected():
    with pytest.raises(ValueError):
        build_grid(GridDims(2, 2, 2), 4, [(2, 0, 0)])
    with pytest.raises(ValueError):
        build_grid(GridDims(2, 2, 2), 4, [(0, 0, 0), (0, 0, 0)])


def test_vertex_activity_matches_exhaustive_scan():
    rng = np.random.default_rng(3)
    occ = rng.random((5, 6, 7)) < 0.3
    active = vertex_activity(occ)
    nz, ny, nx = occ.shape
    for k in range(nz + 1):
        for j in range(ny + 1):
            for i in range(nx + 1):
                incident = False
                for dz in (-1, 0):
                    for dy in (-1, 0):
                        for dx in (-1, 0):
                            z, y, x = k + dz, j + dy, i + dx
                            if 0 <= z < nz and 0 <= y < ny and 0 <= x < nx:
                                incident |= bool(occ[z, y, x])
                assert active[k, j, i] == incident


def test_pool_indices_are_dense_and_referenced():
    rng = np.random.default_rng(4)
    occ = rng.random((4, 4, 4)) < 0.4
    g = build_grid(GridDims(4, 4, 4), 2, occ)
    used = g.vertex_index[g.vertex_index != SENTINEL]
    assert used.max(initial=0) < g.n_active_vertices
    # every pool entry referenced exactly once by the dense index array
    assert sorted(used.tolist()) == list(range(g.n_active_vertices))


class TestCornerFeatures:
    def test_slot8_is_the_far_corner(self):
        g = build_grid(GridDims(1, 1, 1), 3, [(0, 0, 0)])
        row = int(g.vertex_index[1, 1, 1])
        g.feature_pool[row] = 1.0
        assert np.all(corner_features(g, (0, 0, 0))[7] == 1.0)

    def test_zero_features(self):
        g = build_grid(GridDims(1, 1, 1), 3, [(0, 0, 0)])
        assert np.all(corner_features(g, (0, 0, 0)) == 0.0)

    def test_slot_order_matches_basis_evaluation(self):
        # features = vertex coordinate sums; evaluating the trilinear field at
        # a corner must return that corner's own feature
        g = build_grid(GridDims(2, 2, 2), 1, [(1, 0, 1)])
        kji = np.argwhere(g.vertex_index != SENTINEL)
        for k, j, i in kji:
            g.feature_pool[int(g.vertex_index[k, j, i])] = float(i + j + k)
        corners = corner_features(g, (1, 0, 1))
        for slot in range(8):
            w = chi_all(CORNER_OFFSETS[slot].astype(float))
            field_val = w @ corners
            expect = (np.array([1, 0, 1]) + CORNER_OFFSETS[slot]).sum()
            assert field_val[0] == pytest.approx(expect, abs=1e-12)

    def test_unoccupied_voxel_rejected(self):
        g = build_grid(GridDims(2, 2, 2), 3, [(0, 0, 0)])
        with pytest.raises(ValueError):
            corner_features(g, (1, 1, 1))


class TestOctree:
    def test_single_voxel_path_to_root(self):
        occ = np.zeros((4, 4, 4), dtype=bool)
        occ[2, 1, 3] = True
        pyr = build_octree(occ)
        assert pyr.n_levels == 3
        for lvl in pyr.levels:
            assert lvl.sum() == 1
        assert pyr.levels[-1].shape == (1, 1, 1) and pyr.levels[-1][0, 0, 0]

    def test_full_grid_all_set(self):
        pyr = build_octree(np.ones((4, 4, 4), dtype=bool))
        for lvl in pyr.levels:
            assert lvl.all()

    def test_level_count(self):
        g = build_grid(GridDims(5, 3, 2), 1, [])
        pyr = build_octree(g)
        assert pyr.n_levels == int(np.ceil(np.log2(5))) + 1

    def test_max_pool_oracle_exhaustive(self):
        rng = np.random.default_rng(8)
        occ = rng.random((8, 8, 8)) < 0.2
        pyr = build_octree(occ)
        lvl1 = pyr.levels[1]
        for z in range(4):
            for y in range(4):
                for x in range(4):
                    block = occ[2 * z : 2 * z + 2, 2 * y : 2 * y + 2, 2 * x : 2 * x + 2]
                    assert lvl1[z, y, x] == block.any()

    def test_parent_iff_any_child(self):
        rng = np.random.default_rng(9)
        occ = rng.random((7, 5, 6)) < 0.15  # non-power-of-two
        pyr = build_octree(occ)
        for L in range(pyr.n_levels - 1):
            child, parent = pyr.levels[L], pyr.levels[L + 1]
            from diver.grid import _max_pool2

            np.testing.assert_array_equal(parent, _max_pool2(child))
        assert pyr.levels[-1].size == 1
        assert pyr.levels[-1].item() == occ.any()


class TestCull:
    def _grid(self):
        rng = np.random.default_rng(10)
        occ = rng.random((4, 4, 4)) < 0.5
        feats = rng.normal(size=(int(vertex_activity(occ).sum()), 3)).astype(np.float32)
        return build_grid(GridDims(4, 4, 4), 3, occ, init=feats)

    def test_all_visible_unchanged(self):
        g = self._grid()
        out = cull(g, np.ones(g.dims.voxel_shape), 0.01)
        np.testing.assert_array_equal(out.occupancy, g.occupancy)
        np.testing.assert_array_equal(out.feature_pool, g.feature_pool)
        np.testing.assert_array_equal(out.vertex_index, g.vertex_index)

    def test_all_invisible_empties_grid(self):
        g = self._grid()
        out = cull(g, np.zeros(g.dims.voxel_shape), 0.01)
        assert out.n_occupied == 0
        assert out.n_active_vertices == 0

    def test_pool_order_preserved(self):
        g = self._grid()
        alpha = np.where(g.occupancy, 1.0, 0.0)
        # knock out one occupied voxel
        zyx = np.argwhere(g.occupancy)[0]
        alpha[tuple(zyx)] = 0.0
        out = cull(g, alpha, 0.5)
        # every surviving pool row equals the original row of the same vertex
        survivors = np.argwhere(out.vertex_index != SENTINEL)
        for k, j, i in survivors:
            new_row = int(out.vertex_index[k, j, i])
            old_row = int(g.vertex_index[k, j, i])
            np.testing.assert_array_equal(out.feature_pool[new_row], g.feature_pool[old_row])
        # relative order: new rows increase with old rows
        old_rows = [int(g.vertex_index[k, j, i]) for k, j, i in survivors]
        assert old_rows == sorted(old_rows)

    def test_monotone_in_tau(self):
        g = self._grid()
        rng = np.random.default_rng(12)
        alpha = rng.random(g.dims.voxel_shape)
        previous = None
        for tau in (0.0, 0.1, 0.3, 0.6, 0.9):
            occ = cull(g, alpha, tau).occupancy
            if previous is not None:
                assert np.all(occ <= previous)  # raising tau never adds voxels
            previous = occ

    def test_tau_zero_keeps_everything(self):
        g = self._grid()
        out = cull(g, np.zeros(g.dims.voxel_shape), 0.0)
        np.testing.assert_array_equal(out.occupancy, g.occupancy)

    def test_shape_mismatch(self):
        g = self._grid()
        with pytest.raises(ValueError):
            cull(g, np.ones((2, 2, 2)), 0.01)
