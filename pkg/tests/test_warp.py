"""Warping functions, basis weights, inverse warps and resampling."""

import numpy as np
import pytest

from warpmix import (
    AnchorGrid,
    DisplacementGrid,
    Image,
    eval_warp,
    fold_count,
    inverse_warp,
    load_displacements_csv,
    make_lattice,
    resample,
    warp_basis,
)
from warpmix.warp import displacement_at, inverse_warp_at, save_displacements_csv

from helpers import sinusoid_template


def random_displacements(grid, scale, seed):
    rng = np.random.default_rng(seed)
    return DisplacementGrid(
        grid, scale * rng.standard_normal((grid.mw1, grid.mw2, 2))
    )


class TestEvalWarp:
    def test_zero_is_identity(self):
        w = DisplacementGrid.zeros(AnchorGrid(3, 4))
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = rng.uniform(-0.5, 1.5, 2)
            np.testing.assert_allclose(eval_warp(w, p), p, atol=1e-15)

    def test_anchor_reproduction(self):
        grid = AnchorGrid(3, 3)
        w = random_displacements(grid, 0.05, 1)
        for i in range(3):
            for j in range(3):
                p = np.array([grid.s_anchors[i], grid.t_anchors[j]])
                np.testing.assert_allclose(
                    eval_warp(w, p), p + w.w[i, j], atol=1e-12
                )

    def test_midpoint_average(self):
        grid = AnchorGrid(3, 3)
        w = random_displacements(grid, 0.05, 2)
        p = np.array([grid.s_anchors[1], (grid.t_anchors[0] + grid.t_anchors[1]) / 2])
        expected = p + (w.w[1, 0] + w.w[1, 1]) / 2
        np.testing.assert_allclose(eval_warp(w, p), expected, atol=1e-12)

    def test_identity_on_domain_boundary(self):
        grid = AnchorGrid(4, 4)
        w = random_displacements(grid, 0.08, 3)
        for p in ([0.0, 0.37], [1.0, 0.8], [0.55, 0.0], [0.2, 1.0], [0.0, 0.0]):
            np.testing.assert_allclose(eval_warp(w, np.array(p)), p, atol=1e-15)

    def test_affine_in_w(self):
        grid = AnchorGrid(2, 3)
        w1 = random_displacements(grid, 0.04, 4)
        w2 = random_displacements(grid, 0.04, 5)
        a, b = 0.6, -1.2
        combo = DisplacementGrid(grid, a * w1.w + b * w2.w)
        rng = np.random.default_rng(6)
        ps = rng.uniform(0, 1, 50)
        pt = rng.uniform(0, 1, 50)
        ds_c, dt_c = displacement_at(combo, ps, pt)
        ds_1, dt_1 = displacement_at(w1, ps, pt)
        ds_2, dt_2 = displacement_at(w2, ps, pt)
        np.testing.assert_allclose(ds_c, a * ds_1 + b * ds_2, atol=1e-12)
        np.testing.assert_allclose(dt_c, a * dt_1 + b * dt_2, atol=1e-12)


class TestWarpBasis:
    def test_single_weight_at_anchor(self):
        grid = AnchorGrid(3, 3)
        p = (grid.s_anchors[1], grid.t_anchors[2])
        assert warp_basis(grid, p) == [(1 * 3 + 2, 1.0)]

    def test_zero_on_domain_boundary(self):
        grid = AnchorGrid(3, 3)
        for p in ([0.0, 0.5], [1.0, 0.25], [0.5, 0.0], [0.75, 1.0]):
            assert warp_basis(grid, p) == []

    def test_weights_in_unit_interval_sum_le_one(self):
        grid = AnchorGrid(4, 5)
        rng = np.random.default_rng(7)
        for _ in range(200):
            p = rng.uniform(0, 1, 2)
            pairs = warp_basis(grid, p)
            assert len(pairs) <= 4
            total = sum(wt for _, wt in pairs)
            assert 0.0 <= total <= 1.0 + 1e-12
            for _, wt in pairs:
                assert 0.0 <= wt <= 1.0

    def test_matches_finite_difference_jacobian(self):
        # v is linear in w, so finite differences are exact
        grid = AnchorGrid(3, 2)
        w = random_displacements(grid, 0.03, 8)
        rng = np.random.default_rng(9)
        h = 0.25
        for _ in range(20):
            p = rng.uniform(0, 1, 2)
            pairs = dict(warp_basis(grid, p))
            for a in range(grid.n_anchors):
                for coord in (0, 1):
                    wp = np.array(w.w)
                    wp[a // grid.mw2, a % grid.mw2, coord] += h
                    d = (
                        eval_warp(DisplacementGrid(grid, wp), p) - eval_warp(w, p)
                    ) / h
                    expected = np.zeros(2)
                    expected[coord] = pairs.get(a, 0.0)
                    np.testing.assert_allclose(d, expected, atol=1e-10)


class TestInverseWarp:
    def test_zero_warp_converges_first_step(self):
        w = DisplacementGrid.zeros(AnchorGrid(2, 2))
        p, ok = inverse_warp(w, (0.3, 0.8))
        assert ok
        np.testing.assert_allclose(p, [0.3, 0.8])

    def test_round_trip(self):
        # derived property: v(v^{-1}(p)) = p for moderate smooth displacements
        # (prior-style fields; the fixed point contracts for small warps)
        from warpmix import WarpPrior, sample_warp

        grid = AnchorGrid(5, 5)
        draw = sample_warp(WarpPrior(1.0, grid), 1.0, 10)
        w = DisplacementGrid(grid, draw.w * (0.05 / np.abs(draw.w).max()))
        lat = make_lattice(20, 20)
        ps, pt = lat.node_points()
        us, ut, conv = inverse_warp_at(w, ps, pt)
        assert conv.all()
        ds, dt = displacement_at(w, us, ut)
        np.testing.assert_allclose(us + ds, ps, atol=1e-6)
        np.testing.assert_allclose(ut + dt, pt, atol=1e-6)

    def test_boundary_fixed(self):
        grid = AnchorGrid(3, 3)
        w = random_displacements(grid, 0.05, 11)
        p, ok = inverse_warp(w, (0.0, 0.6))
        assert ok
        np.testing.assert_allclose(p, [0.0, 0.6], atol=1e-12)


class TestResample:
    def test_zero_warp_identity(self):
        lat = make_lattice(10, 12)
        img = sinusoid_template(lat)
        out = resample(img, DisplacementGrid.zeros(AnchorGrid(3, 3)))
        np.testing.assert_allclose(out.values, img.values, atol=1e-12)

    def test_constant_template(self):
        lat = make_lattice(8, 8)
        img = Image(lat, np.full((8, 8), 0.42))
        w = random_displacements(AnchorGrid(3, 3), 0.1, 12)
        np.testing.assert_allclose(resample(img, w).values, 0.42, atol=1e-14)

    def test_affine_shift(self):
        # theta(s,t) = s with constant displacement d in s shifts values by d
        lat = make_lattice(16, 16)
        ss, _ = lat.node_points()
        img = Image.from_vec(lat, ss)
        grid = AnchorGrid(4, 4)
        d = 0.02
        w = np.zeros((4, 4, 2))
        w[..., 0] = d
        out = resample(img, DisplacementGrid(grid, w))
        ps, pt = lat.node_points()
        # nodes strictly inside the anchor hull see exactly displacement d
        hull = (
            (ps >= grid.s_anchors[0])
            & (ps <= grid.s_anchors[-1] - d)
            & (pt >= grid.t_anchors[0])
            & (pt <= grid.t_anchors[-1])
        )
        np.testing.assert_allclose(
            out.vec()[hull], ss[hull] + d, atol=1e-12
        )

    def test_linear_in_template(self):
        lat = make_lattice(9, 9)
        rng = np.random.default_rng(13)
        a_img = Image(lat, rng.random((9, 9)))
        b_img = Image(lat, rng.random((9, 9)))
        w = random_displacements(AnchorGrid(3, 3), 0.05, 14)
        a, b = 2.0, -0.3
        combo = Image(lat, a * a_img.values + b * b_img.values)
        np.testing.assert_allclose(
            resample(combo, w).values,
            a * resample(a_img, w).values + b * resample(b_img, w).values,
            atol=1e-12,
        )


class TestFoldDiagnostics:
    def test_zero_warp_no_folds(self):
        assert fold_count(DisplacementGrid.zeros(AnchorGrid(4, 4))) == 0

    def test_small_warp_no_folds(self):
        assert fold_count(random_displacements(AnchorGrid(4, 4), 0.01, 15)) == 0

    def test_large_crossing_folds(self):
        grid = AnchorGrid(2, 2)
        w = np.zeros((2, 2, 2))
        # neighboring anchors swap order in s: guaranteed fold
        w[0, 0, 0] = 0.5
        w[1, 0, 0] = -0.5
        assert fold_count(DisplacementGrid(grid, w)) > 0


class TestDisplacementCsv:
    def test_roundtrip(self, tmp_path):
        grid = AnchorGrid(3, 4)
        w = random_displacements(grid, 0.07, 16)
        path = tmp_path / "w.csv"
        save_displacements_csv(w, path)
        header = path.read_text().splitlines()[0]
        assert header == "row,col,ds,dt"
        back = load_displacements_csv(path)
        assert back.grid == grid
        np.testing.assert_array_equal(back.w, w.w)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c,d\n1,1,0.0,0.0\n")
        with pytest.raises(Exception):
            load_displacements_csv(path)
