import io

import numpy as np
import pytest

from partpool import ops
from partpool.backbone import FeatureStack, LocStack, normalize_stack_backward
from partpool.core import Rect
from partpool.errors import DegenerateRegion
from partpool.pooling import (Region, deformable_pool, deformable_pool_backward,
                              deformation_field, default_search, dump_deformations,
                              enlarge_region, fit_part_grid, pool_localization,
                              ps_pool, read_deformations)


def make_stack(rng, k=2, classes=2, size=9):
    raw = rng.normal(size=(k * k, classes + 1, size, size))
    return FeatureStack(k, classes, raw)


class TestEnlargeRegion:
    def test_identity(self):
        r = Region(Rect(2, 3, 6, 7))
        out = enlarge_region(r, 1.0, 20, 20)
        assert out.box == r.box

    def test_factor_13(self):
        out = enlarge_region(Region(Rect(10, 10, 20, 20)), 1.3, 100, 100)
        assert (out.box.x0, out.box.y0, out.box.x1, out.box.y1) == \
            (8.5, 8.5, 21.5, 21.5)

    def test_clamped(self):
        out = enlarge_region(Region(Rect(0.0, 0.0, 4.0, 4.0)), 2.0, 10, 10)
        assert (out.box.x0, out.box.y0) == (0.0, 0.0)
        assert (out.box.x1, out.box.y1) == (6.0, 6.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateRegion):
            enlarge_region(Region(Rect(-10.0, -10.0, -2.0, -2.0)), 1.0, 8, 8)


class TestFitPartGrid:
    def test_k1_single_cell(self):
        grid = fit_part_grid(Region(Rect(1, 2, 5, 6)), 1, 10, 10)
        assert grid.cells[0] == Rect(1, 2, 5, 6)
        assert grid.part_w == 4.0 and grid.part_h == 4.0

    def test_k2_tiling(self):
        grid = fit_part_grid(Region(Rect(0, 0, 4, 4)), 2, 10, 10)
        assert grid.cells[0] == Rect(0, 0, 2, 2)
        assert grid.cells[1] == Rect(2, 0, 4, 2)   # row-major over (i, j)
        assert grid.cells[2] == Rect(0, 2, 2, 4)
        assert grid.cells[3] == Rect(2, 2, 4, 4)

    def test_cells_tile_without_gaps(self):
        grid = fit_part_grid(Region(Rect(0.3, 1.1, 7.9, 8.6)), 3, 12, 12)
        for i in range(3):
            for j in range(2):
                left = grid.cells[i * 3 + j]
                right = grid.cells[i * 3 + j + 1]
                assert left.x1 == right.x0

    def test_degenerate_subcell_parts(self):
        # cells much thinner than a map cell cannot all cover a center
        with pytest.raises(DegenerateRegion):
            fit_part_grid(Region(Rect(0.0, 0.0, 2.0, 2.0)), 7, 10, 10)


class TestDeformablePool:
    def test_infinite_lambda_equals_ps_pool_bitwise(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            stack = make_stack(rng)
            grid = fit_part_grid(Region(Rect(1.1, 0.7, 7.8, 8.2)), 2, 9, 9)
            a = deformable_pool(stack, grid, 1e9)
            b = ps_pool(stack, grid)
            assert np.array_equal(a.values, b.values)
            assert not a.disp.any()

    def test_constant_map_zero_displacement(self):
        raw = np.full((1, 2, 8, 8), 1.0)
        stack = FeatureStack(1, 1, raw)
        grid = fit_part_grid(Region(Rect(2, 2, 6, 6)), 1, 8, 8)
        # lam must exceed the ulp noise of summing equal values, so no
        # zero-cost tie can be broken by a 1-ulp larger mean
        for lam in (0.3, 5.0):
            pooled = deformable_pool(stack, grid, lam)
            assert not pooled.disp.any()

    def test_single_cell_hand_case(self):
        # spec for the underlying math: a lone peak one cell to the right
        # wins when its score beats the deformation cost
        vals = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
        raw = np.stack([np.zeros((3, 3)), vals])[None]  # background + 1 class
        stack = FeatureStack(1, 1, raw, raw)  # score values used verbatim
        grid = fit_part_grid(Region(Rect(1.0, 1.0, 2.0, 2.0)), 1, 3, 3)
        pooled = deformable_pool(stack, grid, 0.3, search=(1, 1))
        assert tuple(pooled.disp[0, 1]) == (1, 0)
        assert pooled.values[0, 1] == pytest.approx(0.7)

    def test_monotone_vs_ps(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            stack = make_stack(rng)
            grid = fit_part_grid(Region(Rect(0.9, 1.2, 8.1, 7.7)), 2, 9, 9)
            d = deformable_pool(stack, grid, 0.1)
            p = ps_pool(stack, grid)
            assert (d.values[:, 1:] >= p.values[:, 1:] - 1e-12).all()

    def test_background_column_invariant(self):
        rng = np.random.default_rng(2)
        stack = make_stack(rng)
        grid = fit_part_grid(Region(Rect(0.9, 1.2, 8.1, 7.7)), 2, 9, 9)
        d = deformable_pool(stack, grid, 0.1)
        p = ps_pool(stack, grid)
        assert np.array_equal(d.values[:, 0], p.values[:, 0])
        assert not d.disp[:, 0].any()

    def test_zero_search_equals_ps(self):
        rng = np.random.default_rng(3)
        stack = make_stack(rng)
        grid = fit_part_grid(Region(Rect(0.9, 1.2, 8.1, 7.7)), 2, 9, 9)
        a = deformable_pool(stack, grid, 0.3, search=(0, 0))
        b = ps_pool(stack, grid)
        assert np.array_equal(a.values, b.values)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        stack = make_stack(rng)
        grid = fit_part_grid(Region(Rect(0.9, 1.2, 8.1, 7.7)), 2, 9, 9)
        a = deformable_pool(stack, grid, 0.3)
        b = deformable_pool(stack, grid, 0.3)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.disp, b.disp)

    def test_default_search_is_one_part_extent(self):
        grid = fit_part_grid(Region(Rect(0, 0, 9, 6)), 3, 12, 12)
        assert default_search(grid) == (3, 2)

    def test_cost_scale_invariance(self):
        # same normalized displacement at doubled scale costs the same
        lam = 0.3
        for w, dx in ((2.0, 1), (4.0, 2), (8.0, 4)):
            cost = lam * (dx / w) ** 2
            assert cost == pytest.approx(lam * 0.25)


class TestDeformationField:
    def test_field_shape_and_values(self):
        rng = np.random.default_rng(5)
        stack = make_stack(rng)
        grid = fit_part_grid(Region(Rect(0.9, 1.2, 8.1, 7.7)), 2, 9, 9)
        pooled = deformable_pool(stack, grid, 0.05)
        field = deformation_field(pooled)
        assert field.shape == (2, 2 * 4)
        for c in range(2):
            for p in range(4):
                assert field[c, 2 * p] == pooled.disp[p, c + 1, 0] / grid.part_w
                assert field[c, 2 * p + 1] == pooled.disp[p, c + 1, 1] / grid.part_h


class TestPoolLocalization:
    def test_constant_maps(self):
        rng = np.random.default_rng(6)
        stack = make_stack(rng)
        grid = fit_part_grid(Region(Rect(0.9, 1.2, 8.1, 7.7)), 2, 9, 9)
        pooled = deformable_pool(stack, grid, 0.05)
        loc = LocStack(2, 2, np.full((4, 2, 4, 9, 9), 0.37))
        out = pool_localization(loc, grid, pooled)
        assert np.allclose(out, 0.37)

    def test_zero_displacement_matches_ps_style(self):
        rng = np.random.default_rng(7)
        stack = make_stack(rng)
        grid = fit_part_grid(Region(Rect(0.9, 1.2, 8.1, 7.7)), 2, 9, 9)
        loc = LocStack(2, 2, rng.normal(size=(4, 2, 4, 9, 9)))
        ps = ps_pool(stack, grid)
        inf = deformable_pool(stack, grid, 1e9)
        assert np.array_equal(pool_localization(loc, grid, ps),
                              pool_localization(loc, grid, inf))

    def test_ramp_lookup(self):
        # 1x1-cell part reads exactly the displaced cell of a ramp map
        ramp = np.arange(9.0).reshape(3, 3)
        raw = np.zeros((1, 2, 3, 3))
        raw[0, 1, 1, 2] = 1.0
        stack = FeatureStack(1, 1, raw, raw)
        grid = fit_part_grid(Region(Rect(1.0, 1.0, 2.0, 2.0)), 1, 3, 3)
        pooled = deformable_pool(stack, grid, 0.3, search=(1, 1))
        assert tuple(pooled.disp[0, 1]) == (1, 0)
        loc = LocStack(1, 1, ramp[None, None, None].repeat(4, axis=2))
        out = pool_localization(loc, grid, pooled)
        assert np.allclose(out[0, 0], ramp[1, 2])


class TestPoolBackward:
    def test_zero_upstream(self):
        rng = np.random.default_rng(8)
        stack = make_stack(rng)
        grid = fit_part_grid(Region(Rect(0.9, 1.2, 8.1, 7.7)), 2, 9, 9)
        pooled = deformable_pool(stack, grid, 0.3)
        d_norm = np.zeros_like(stack.normalized)
        deformable_pool_backward(pooled, np.zeros_like(pooled.values), None,
                                 d_norm, None)
        assert not d_norm.any()

    def test_infinite_lambda_matches_ps_gradient(self):
        rng = np.random.default_rng(9)
        stack = make_stack(rng)
        grid = fit_part_grid(Region(Rect(0.9, 1.2, 8.1, 7.7)), 2, 9, 9)
        up = rng.normal(size=(4, 3))
        g1 = np.zeros_like(stack.normalized)
        g2 = np.zeros_like(stack.normalized)
        deformable_pool_backward(deformable_pool(stack, grid, 1e9), up, None,
                                 g1, None)
        deformable_pool_backward(ps_pool(stack, grid), up, None, g2, None)
        assert np.array_equal(g1, g2)

    def test_loc_backward_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        stack = make_stack(rng)
        grid = fit_part_grid(Region(Rect(0.9, 1.2, 8.1, 7.7)), 2, 9, 9)
        pooled = deformable_pool(stack, grid, 0.3)
        loc_maps = rng.normal(size=(4, 2, 4, 9, 9))
        up = rng.normal(size=(4, 2, 4))
        d_loc = np.zeros_like(loc_maps)
        deformable_pool_backward(pooled, None, up, None, d_loc)

        def f(maps):
            out = pool_localization(LocStack(2, 2, maps), grid, pooled)
            return float((out * up).sum())

        num = ops.finite_diff_gradient(f, loc_maps, 1e-5)
        assert ops.max_rel_error(d_loc, num) < 1e-6

    def test_cls_backward_through_normalization(self):
        rng = np.random.default_rng(11)
        raw = rng.normal(size=(4, 3, 9, 9))
        raw += 0.5 * np.sign(raw)
        stack = FeatureStack(2, 2, raw)
        grid = fit_part_grid(Region(Rect(0.9, 1.2, 8.1, 7.7)), 2, 9, 9)
        pooled = deformable_pool(stack, grid, 0.5)
        up = rng.normal(size=pooled.values.shape)
        d_norm = np.zeros_like(stack.normalized)
        deformable_pool_backward(pooled, up, None, d_norm, None)
        ana = normalize_stack_backward(raw, d_norm)

        def f(r):
            s = FeatureStack(2, 2, r)
            p = deformable_pool(s, grid, 0.5)
            return float((p.values * up).sum())

        num = ops.finite_diff_gradient(f, raw, 1e-5)
        assert ops.max_rel_error(ana, num) < 1e-4


class TestDeformationDump:
    def test_roundtrip_record_shape(self):
        rng = np.random.default_rng(12)
        stack = make_stack(rng)
        grid = fit_part_grid(Region(Rect(0.9, 1.2, 8.1, 7.7)), 2, 9, 9)
        pooled = deformable_pool(stack, grid, 0.1)
        buf = io.StringIO()
        dump_deformations(buf, Region(Rect(0.9, 1.2, 8.1, 7.7), region_id=7),
                          pooled)
        buf.seek(0)
        records = list(read_deformations(buf))
        assert len(records) == 2
        for rec in records:
            assert rec["region"] == 7
            assert len(rec["displacements"]) == 2 * 4
