"""Simulation, baselines and benchmark metrics."""

import numpy as np
import pytest

from warpmix import (
    AnchorGrid,
    DisplacementGrid,
    FitConfig,
    Image,
    VarianceParams,
    benchmark,
    fit_pointwise,
    fit_procrustes,
    make_lattice,
    simulate_dataset,
    template_mse,
    update_template,
    warp_mse,
)
from warpmix.simbench import SimSpec, write_benchmark_csv

from helpers import disk_mask, full_mask, phantom_template


def make_spec(lat, n, params, grid, mask=None, seed=0):
    return SimSpec(
        template=phantom_template(lat),
        n=n,
        params=params,
        anchor_grid=grid,
        mask=mask,
        seed=seed,
    )


class TestSimulate:
    def test_zero_variances_returns_copies(self):
        lat = make_lattice(16, 16)
        spec = make_spec(lat, 3, VarianceParams(0.0, 0.0, 0.0), AnchorGrid(2, 2))
        images, warps, fields = simulate_dataset(spec)
        for y, w, x in zip(images, warps, fields):
            np.testing.assert_array_equal(y.values, spec.template.values)
            np.testing.assert_array_equal(w.w, 0.0)
            np.testing.assert_array_equal(x.values, 0.0)

    def test_deterministic(self):
        lat = make_lattice(12, 12)
        spec = make_spec(
            lat, 4, VarianceParams(0.001, 100.0, 10.0), AnchorGrid(3, 3), seed=5
        )
        a = simulate_dataset(spec)
        b = simulate_dataset(spec)
        for imgs_a, imgs_b in zip(a, b):
            for u, v in zip(imgs_a, imgs_b):
                arr_u = u.values if isinstance(u, Image) else u.w
                arr_v = v.values if isinstance(v, Image) else v.w
                np.testing.assert_array_equal(arr_u, arr_v)

    def test_noise_variance_monte_carlo(self):
        # residual after subtracting warp and intensity effects is the
        # i.i.d. noise: empirical variance matches sigma2 within 5%
        from warpmix.warp import resample

        lat = make_lattice(64, 64)
        sigma2 = 0.001
        spec = make_spec(
            lat, 20, VarianceParams(sigma2, 100.0, 10.0), AnchorGrid(4, 4), seed=6
        )
        images, warps, fields = simulate_dataset(spec)
        eps = np.concatenate(
            [
                (y.values - resample(spec.template, w).values - x.values).ravel()
                for y, w, x in zip(images, warps, fields)
            ]
        )
        assert np.var(eps) == pytest.approx(sigma2, rel=0.05)

    def test_mask_zeroes_intensity_outside(self):
        lat = make_lattice(16, 16)
        mask = disk_mask(lat, 0.25)
        spec = make_spec(
            lat, 3, VarianceParams(0.001, 100.0, 10.0), AnchorGrid(2, 2),
            mask=mask, seed=7,
        )
        _, _, fields = simulate_dataset(spec)
        outside = mask.values == 0
        for x in fields:
            np.testing.assert_array_equal(x.values[outside], 0.0)
            assert np.abs(x.values[~outside]).max() > 0


class TestPointwise:
    def test_single_image(self):
        lat = make_lattice(8, 8)
        img = phantom_template(lat)
        np.testing.assert_array_equal(fit_pointwise([img]).values, img.values)

    def test_two_images_average(self):
        lat = make_lattice(8, 8)
        rng = np.random.default_rng(8)
        a = Image(lat, rng.random((8, 8)))
        b = Image(lat, rng.random((8, 8)))
        np.testing.assert_allclose(
            fit_pointwise([a, b]).values, (a.values + b.values) / 2
        )

    def test_matches_update_template_with_zero_warps(self):
        lat = make_lattice(10, 10)
        rng = np.random.default_rng(9)
        images = [Image(lat, rng.random((10, 10))) for _ in range(5)]
        zeros = [DisplacementGrid.zeros(AnchorGrid(2, 2)) for _ in range(5)]
        np.testing.assert_allclose(
            fit_pointwise(images).values,
            update_template(images, zeros).values,
            atol=1e-13,
        )


class TestProcrustes:
    def test_huge_lambda_pins_warps(self):
        lat = make_lattice(24, 24)
        spec = make_spec(
            lat, 4, VarianceParams(0.001, 100.0, 10.0), AnchorGrid(3, 3), seed=10
        )
        images, _, _ = simulate_dataset(spec)
        cfg = FitConfig(anchor_grid=(3, 3), outer_iters=2, inner_iters=2)
        result = fit_procrustes(images, 1e10, cfg)
        for w in result.warps:
            assert np.abs(w.w).max() < 1e-6
        np.testing.assert_allclose(
            result.template.values, fit_pointwise(images).values, atol=1e-5
        )

    def test_zero_lambda_identical_images(self):
        lat = make_lattice(16, 16)
        img = phantom_template(lat)
        cfg = FitConfig(anchor_grid=(2, 2), outer_iters=1, inner_iters=2)
        result = fit_procrustes([img, img], 0.0, cfg)
        r = img.values - result.template.values
        assert np.abs(r).max() < 1e-10

    def test_free_warp_fits_data_at_least_as_well(self):
        # more freedom fits the data at least as well: per-image warp
        # estimation against a common fixed template, lambda = 0 vs > 0
        from warpmix.grid import image_gradient
        from warpmix.inference import _gn_minimize
        from warpmix.warp import resample

        lat = make_lattice(24, 24)
        grid = AnchorGrid(3, 3)
        spec = make_spec(
            lat, 4, VarianceParams(0.001, 100.0, 10.0), grid, seed=11
        )
        images, _, _ = simulate_dataset(spec)
        template = fit_pointwise(images)
        grad = image_gradient(template)
        from warpmix import WarpPrior

        pen = 0.05 * WarpPrior(1.0, grid).C_inv

        def data_term(y, w):
            r = y.vec() - resample(template, w).vec()
            return float(r @ r)

        # the freedom relation: dropping the penalty and continuing from
        # the penalized solution can only improve the data fit (with cold
        # starts the two problems may land in different local basins)
        for y in images:
            w_reg, _, _ = _gn_minimize(
                y, template, grad, DisplacementGrid.zeros(grid),
                pen, None, 40, 10, 1e-10,
            )
            w_free, _, _ = _gn_minimize(
                y, template, grad, w_reg, None, None, 40, 10, 1e-10
            )
            assert data_term(y, w_free) <= data_term(y, w_reg) + 1e-12


class TestMetrics:
    def test_template_mse(self):
        lat = make_lattice(8, 8)
        img = phantom_template(lat)
        assert template_mse(img, img) == 0.0
        shifted = Image(lat, img.values + 0.1)
        assert template_mse(shifted, img) == pytest.approx(0.01)
        assert template_mse(shifted, img) == template_mse(img, shifted)

    def test_warp_mse_identical(self):
        lat = make_lattice(10, 10)
        grid = AnchorGrid(3, 3)
        rng = np.random.default_rng(12)
        warps = [
            DisplacementGrid(grid, 0.04 * rng.standard_normal((3, 3, 2)))
            for _ in range(3)
        ]
        assert warp_mse(warps, warps, full_mask(lat)) == 0.0

    def test_warp_mse_constant_offset(self):
        # offset d everywhere inside the anchor hull -> ||d||^2 on those nodes
        lat = make_lattice(20, 20)
        grid = AnchorGrid(4, 4)
        d = np.array([0.01, -0.02])
        w0 = DisplacementGrid.zeros(grid)
        w1 = DisplacementGrid(grid, np.tile(d, (4, 4, 1)))
        ss, tt = lat.node_points()
        hull = (
            (ss >= grid.s_anchors[0])
            & (ss <= grid.s_anchors[-1])
            & (tt >= grid.t_anchors[0])
            & (tt <= grid.t_anchors[-1])
        )
        mask = Image.from_vec(lat, hull.astype(np.float64))
        assert warp_mse([w1], [w0], mask) == pytest.approx(float(d @ d))

    def test_warp_mse_ignores_outside_mask(self):
        lat = make_lattice(16, 16)
        grid = AnchorGrid(4, 4)
        # disk of radius 0.12 stays clear of anchor (0,0)'s support (0, 0.4)^2
        mask = disk_mask(lat, 0.12)
        base = DisplacementGrid.zeros(grid)
        w = np.zeros((4, 4, 2))
        w[0, 0] = (0.05, 0.05)  # anchor far outside the small central mask
        altered = DisplacementGrid(grid, w)
        # anchor (0,0) support does not intersect the mask
        assert warp_mse([altered], [base], mask) == pytest.approx(0.0, abs=1e-30)

    def test_empty_mask_rejected(self):
        lat = make_lattice(8, 8)
        grid = AnchorGrid(2, 2)
        w = [DisplacementGrid.zeros(grid)]
        with pytest.raises(ValueError):
            warp_mse(w, w, Image(lat, np.zeros((8, 8))))


class TestBenchmark:
    def test_zero_variances_all_methods_exact(self, tmp_path):
        lat = make_lattice(16, 16)
        spec = make_spec(lat, 3, VarianceParams(0.0, 0.0, 0.0), AnchorGrid(2, 2))
        cfg = FitConfig(anchor_grid=(2, 2), outer_iters=1, inner_iters=1)
        rows = benchmark(spec, 1, config=cfg)
        assert len(rows) == 4
        for row in rows:
            assert row.error is None
            assert row.template_mse == pytest.approx(0.0, abs=1e-12)
            assert row.warp_mse == pytest.approx(0.0, abs=1e-12)
        write_benchmark_csv(rows, tmp_path / "bench.csv")
        lines = (tmp_path / "bench.csv").read_text().splitlines()
        assert lines[0] == (
            "rep,method,template_mse,warp_mse,sigma2,sigma2_tau2,sigma2_gamma2,seconds"
        )
        assert len(lines) == 5

    def test_row_count(self):
        lat = make_lattice(16, 16)
        spec = make_spec(
            lat, 2, VarianceParams(0.001, 100.0, 10.0), AnchorGrid(2, 2), seed=13
        )
        cfg = FitConfig(anchor_grid=(2, 2), outer_iters=1, inner_iters=1)
        rows = benchmark(spec, 2, methods=("pointwise", "procrustes_free"), config=cfg)
        assert len(rows) == 4
        assert {r.rep for r in rows} == {0, 1}

    def test_unknown_method_rejected(self):
        lat = make_lattice(16, 16)
        spec = make_spec(lat, 2, VarianceParams(0.0, 0.0, 0.0), AnchorGrid(2, 2))
        with pytest.raises(ValueError):
            benchmark(spec, 1, methods=("nearest-neighbor",))
