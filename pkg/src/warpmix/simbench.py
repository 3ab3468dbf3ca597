"""Synthetic data generation and baseline fitters with recovery metrics.

Data are drawn from the generative model: y_i = theta(v(., w_i)) + x_i + eps_i
with w_i ~ N(0, sigma2*C), x_i ~ N(0, sigma2*S) (optionally zeroed outside a
mask) and i.i.d. noise. Baselines: the pointwise mean (no warps), Procrustes
free warp (warps as unpenalized parameters) and regularized Procrustes
(penalty lambda * w^T C1^{-1} w with the unit-scale warp kernel C1).
"""

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import WarpmixError
from .gmrf import IntensityModel, WarpPrior, assemble_precision, sample_gmrf, sample_warp
from .grid import Image, image_gradient
from .inference import FitConfig, ModelFit, _gn_minimize, fit, update_template
from .likelihood import VarianceParams, parallel_map
from .solver import factorize
from .warp import AnchorGrid, DisplacementGrid, displacement_at, resample

METHODS = ("proposed", "procrustes_free", "procrustes_reg", "pointwise")


@dataclass(frozen=True)
class SimSpec:
    template: Image
    n: int
    params: VarianceParams
    anchor_grid: AnchorGrid
    mask: Image | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"n must be >= 0, got {self.n}")
        if self.mask is not None and self.mask.lattice != self.template.lattice:
            raise ValueError("mask lattice must match the template lattice")


@dataclass
class BenchResult:
    rep: int
    method: str
    template_mse: float | None = None
    warp_mse: float | None = None
    sigma2: float | None = None
    sigma2_tau2: float | None = None
    sigma2_gamma2: float | None = None
    seconds: float | None = None
    error: str | None = None


def simulate_dataset(
    spec: SimSpec,
) -> tuple[list[Image], list[DisplacementGrid], list[Image]]:
    """Draw (observations, true warps, true intensity fields).

    Observations are returned unclamped; clamping to [0, 1] happens only
    on file export. Deterministic for a given seed.
    """
    rng = np.random.default_rng(spec.seed)
    lat = spec.template.lattice
    sigma2, tau2, gamma2 = spec.params.sigma2, spec.params.tau2, spec.params.gamma2
    prior = WarpPrior(gamma2, spec.anchor_grid) if sigma2 * gamma2 > 0 else None
    model = IntensityModel(tau2, lat) if sigma2 * tau2 > 0 else None
    gmrf_factor = (
        factorize(assemble_precision(model)) if model is not None else None
    )
    mask = None if spec.mask is None else (spec.mask.values != 0)

    images, warps, fields = [], [], []
    for _ in range(spec.n):
        if prior is not None:
            w = sample_warp(prior, sigma2, rng)
        else:
            w = DisplacementGrid.zeros(spec.anchor_grid)
        if model is not None:
            x = sample_gmrf(model, sigma2, rng, factor=gmrf_factor)
            if mask is not None:
                x = Image(lat, np.where(mask, x.values, 0.0))
        else:
            x = Image(lat, np.zeros((lat.m1, lat.m2)))
        eps = (
            math.sqrt(sigma2) * rng.standard_normal((lat.m1, lat.m2))
            if sigma2 > 0
            else np.zeros((lat.m1, lat.m2))
        )
        y = resample(spec.template, w).values + x.values + eps
        images.append(Image(lat, y))
        warps.append(w)
        fields.append(x)
    return images, warps, fields


def fit_pointwise(images: list[Image]) -> Image:
    """Template of the no-warp model: the pointwise mean image."""
    acc = np.zeros_like(images[0].values)
    for y in images:
        acc += y.values
    return Image(images[0].lattice, acc / len(images))


def fit_procrustes(
    images: list[Image],
    lam: float,
    config: FitConfig = FitConfig(),
) -> ModelFit:
    """Procrustes baseline: warps as parameters, i.i.d. intensity noise.

    Minimizes ||y - theta^w||^2 + lam * w^T C1^{-1} w per image (C1 the
    unit-scale warp kernel), alternating with the pointwise back-warped
    template update; lam = 0 is the free-warp variant. An infinite lam
    pins all warps to zero.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    lat = images[0].lattice
    if any(y.lattice != lat for y in images):
        raise ValueError("all images must share one lattice")
    grid = AnchorGrid(*config.anchor_grid)
    threads = config.threads
    penalty = None
    if lam > 0 and math.isfinite(lam):
        penalty = lam * WarpPrior(1.0, grid).C_inv
    pin_zero = lam > 0 and not math.isfinite(lam)

    w0s = [DisplacementGrid.zeros(grid) for _ in images]
    template = update_template(images, w0s, threads)
    sweeps = config.outer_iters * config.inner_iters
    trace = []
    total_steps = 0
    for _ in range(sweeps):
        grad = image_gradient(template)

        def one(iw):
            y, w0 = iw
            return _gn_minimize(
                y,
                template,
                grad,
                w0,
                penalty,
                None,
                config.gn_max_steps,
                config.gn_max_halvings,
                config.gn_tol,
            )

        if pin_zero:
            results = [(w0, [0.0], 0) for w0 in w0s]
        else:
            results = parallel_map(one, list(zip(images, w0s)), threads)
        w0s = [r[0] for r in results]
        total_steps += sum(r[2] for r in results)
        template = update_template(images, w0s, threads)
        obj = 0.0
        for y, w in zip(images, w0s):
            r = y.vec() - resample(template, w).vec()
            obj += float(r @ r)
            if penalty is not None:
                wv = w.vec()
                obj += float(wv @ (penalty @ wv))
        trace.append(obj)

    zeros = [Image(lat, np.zeros((lat.m1, lat.m2))) for _ in images]
    return ModelFit(
        template=template,
        params=None,
        warps=w0s,
        intensities=zeros,
        nll_trace=trace,
        diagnostics={"gn_steps": total_steps, "sweeps": sweeps},
    )


def template_mse(est: Image, truth: Image) -> float:
    if est.lattice != truth.lattice:
        raise ValueError("images must share one lattice")
    d = est.values - truth.values
    return float(np.mean(d * d))


def warp_mse(
    est_warps: list[DisplacementGrid],
    true_warps: list[DisplacementGrid],
    mask: Image,
) -> float:
    """Mean squared Euclidean deviation of the dense displacement fields
    over masked lattice nodes (and over images)."""
    sel = mask.values.reshape(-1) != 0
    if not sel.any():
        raise ValueError("warp MSE mask is empty")
    ps, pt = mask.lattice.node_points()
    ps, pt = ps[sel], pt[sel]
    total = 0.0
    for we, wt_ in zip(est_warps, true_warps):
        if we.grid != wt_.grid:
            raise ValueError("anchor grids must match")
        es, et = displacement_at(we, ps, pt)
        ts, tt = displacement_at(wt_, ps, pt)
        total += float(np.mean((es - ts) ** 2 + (et - tt) ** 2))
    return total / len(est_warps)


def _full_mask(lat) -> Image:
    return Image(lat, np.ones((lat.m1, lat.m2)))


def benchmark(
    spec: SimSpec,
    repetitions: int,
    methods: tuple[str, ...] = METHODS,
    config: FitConfig = FitConfig(),
) -> list[BenchResult]:
    """Simulate-and-fit study; one result row per (repetition, method).

    Per-method failures are recorded in the row instead of aborting the
    batch. Repetition seeds are spec.seed + repetition index.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown benchmark methods: {sorted(unknown)}")
    mask = spec.mask if spec.mask is not None else _full_mask(spec.template.lattice)
    gamma2 = spec.params.gamma2
    lam_reg = math.inf if gamma2 == 0 else 0.5 / gamma2
    zero_warps = [DisplacementGrid.zeros(spec.anchor_grid) for _ in range(spec.n)]
    cfg = replace(config, anchor_grid=(spec.anchor_grid.mw1, spec.anchor_grid.mw2))

    rows: list[BenchResult] = []
    for rep in range(repetitions):
        rep_spec = SimSpec(
            template=spec.template,
            n=spec.n,
            params=spec.params,
            anchor_grid=spec.anchor_grid,
            mask=spec.mask,
            seed=spec.seed + rep,
        )
        images, true_warps, _ = simulate_dataset(rep_spec)
        for method in methods:
            row = BenchResult(rep=rep, method=method)
            t0 = time.perf_counter()
            try:
                if method == "proposed":
                    result = fit(images, cfg)
                    row.template_mse = template_mse(result.template, spec.template)
                    row.warp_mse = warp_mse(result.warps, true_warps, mask)
                    row.sigma2 = result.params.sigma2
                    row.sigma2_tau2 = result.params.sigma2_tau2
                    row.sigma2_gamma2 = result.params.sigma2_gamma2
                elif method in ("procrustes_free", "procrustes_reg"):
                    lam = 0.0 if method == "procrustes_free" else lam_reg
                    result = fit_procrustes(images, lam, cfg)
                    row.template_mse = template_mse(result.template, spec.template)
                    row.warp_mse = warp_mse(result.warps, true_warps, mask)
                else:  # pointwise
                    est = fit_pointwise(images)
                    row.template_mse = template_mse(est, spec.template)
                    row.warp_mse = warp_mse(zero_warps, true_warps, mask)
            except (WarpmixError, np.linalg.LinAlgError, ValueError) as exc:
                row.error = f"{type(exc).__name__}: {exc}"
            row.seconds = time.perf_counter() - t0
            rows.append(row)
    return rows


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_benchmark_csv(rows: list[BenchResult], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("rep,method,template_mse,warp_mse,sigma2,sigma2_tau2,sigma2_gamma2,seconds\n")
        for r in rows:
            method = r.method + ("!failed" if r.error else "")
            fh.write(
                f"{r.rep},{method},{_fmt(r.template_mse)},{_fmt(r.warp_mse)},"
                f"{_fmt(r.sigma2)},{_fmt(r.sigma2_tau2)},{_fmt(r.sigma2_gamma2)},"
                f"{'' if r.seconds is None else f'{r.seconds:.3f}'}\n"
            )
