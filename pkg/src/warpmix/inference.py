"""Model fitting: alternating variance estimation, warp prediction and
template updates, plus posterior intensity prediction and reconstruction.

The fitting loop follows the hard-EM style alternation: the template is
the pointwise average of back-warped observations given the current warp
predictions; variance parameters maximize the sigma2-profiled linearized
likelihood at fixed linearization points; warp predictions minimize the
per-image posterior by Gauss-Newton with backtracking.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from .errors import EstimationError, NotPositiveDefiniteError
from .gmrf import IntensityModel, WarpPrior, assemble_precision
from .grid import GradientField, Image, image_gradient, interp_at
from .likelihood import (
    VarianceParams,
    apply_Ainv,
    assemble_Z,
    intensity_factor,
    parallel_map,
    profiled_nll,
)
from .solver import CholFactor, Symbolic, symbolic_analyze
from .warp import AnchorGrid, DisplacementGrid, fold_count, inverse_warp_at, resample


@dataclass(frozen=True)
class FitConfig:
    anchor_grid: tuple[int, int] = (4, 4)
    outer_iters: int = 5
    inner_iters: int = 3
    init_tau2: float = 1.0
    init_gamma2: float = 0.1
    # Nelder-Mead over (log tau2, log gamma2)
    simplex_scale: float = 1.0
    nm_max_evals: int = 80
    nm_xatol: float = 1e-3
    nm_fatol: float = 1e-3
    # Gauss-Newton warp prediction
    gn_max_steps: int = 20
    gn_max_halvings: int = 10
    gn_tol: float = 1e-6
    # optional early stop of the outer loop on relative nll change
    early_stop_tol: float | None = None
    threads: int = 1

    def __post_init__(self):
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise ValueError("iteration counts must be >= 1")


@dataclass
class ModelFit:
    template: Image
    params: VarianceParams | None
    warps: list[DisplacementGrid]
    intensities: list[Image]
    nll_trace: list[float]
    diagnostics: dict = field(default_factory=dict)


def update_template(
    images: list[Image], warps: list[DisplacementGrid], threads: int = 1
) -> Image:
    """Pointwise average of back-warped observations at the lattice nodes."""
    lat = images[0].lattice
    ps, pt = lat.node_points()

    def back_warp(iw):
        y, w = iw
        us, ut, _ = inverse_warp_at(w, ps, pt)
        return interp_at(y, us, ut)

    vals = parallel_map(back_warp, list(zip(images, warps)), threads)
    acc = np.zeros(lat.m)
    for v in vals:
        acc += v
    return Image.from_vec(lat, acc / len(images))


def _solve_normal(m_mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve the (nominally SPD) Gauss-Newton normal equations.

    Singular systems (flat gradients under an unpenalized data term) get
    an escalating diagonal jitter before giving up.
    """
    jitter = 0.0
    base = max(np.trace(m_mat) / m_mat.shape[0], 1.0)
    for attempt in range(4):
        try:
            cm = cho_factor(m_mat + jitter * np.eye(m_mat.shape[0]), lower=True)
            return cho_solve(cm, rhs)
        except np.linalg.LinAlgError:
            jitter = base * 10.0 ** (-12 + 4 * attempt)
    raise NotPositiveDefiniteError("Gauss-Newton normal matrix is not SPD")


def _gn_minimize(
    y: Image,
    template: Image,
    grad: GradientField,
    w_init: DisplacementGrid,
    penalty: np.ndarray | None,
    f: CholFactor | None,
    max_steps: int,
    max_halvings: int,
    tol: float,
) -> tuple[DisplacementGrid, list[float], int]:
    """Minimize quad(y - theta^w) + w^T P w by Gauss-Newton with backtracking.

    ``f`` factors I + S^{-1}: the data quadratic is then taken in the
    (S+I)^{-1} metric; with ``f=None`` it is the plain sum of squares.
    ``penalty`` is the q x q matrix P (None means no penalty). The
    objective trace over accepted iterates never increases.
    """
    grid = w_init.grid
    yv = y.vec()

    def data_quad(r):
        if f is None:
            return float(r @ r)
        return float(r @ apply_Ainv(f, r))

    def objective(wvec, r):
        pen = 0.0 if penalty is None else float(wvec @ (penalty @ wvec))
        return data_quad(r) + pen

    w = w_init
    wv = w.vec()
    r = yv - resample(template, w).vec()
    e_cur = objective(wv, r)
    trace = [e_cur]
    steps = 0
    for _ in range(max_steps):
        Z = assemble_Z(template, w, grad)
        if f is None:
            ainv_r = r
            m_mat = (Z.T @ Z).toarray()
        else:
            ainv_r = apply_Ainv(f, r)
            m_mat = Z.T @ apply_Ainv(f, Z.toarray())
        rhs = Z.T @ ainv_r
        if penalty is not None:
            m_mat = m_mat + penalty
            rhs = rhs - penalty @ wv
        def try_direction(delta):
            step = 1.0
            for _ in range(max_halvings + 1):
                wv_new = wv + step * delta
                w_new = DisplacementGrid.from_vec(grid, wv_new)
                r_new = yv - resample(template, w_new).vec()
                e_new = objective(wv_new, r_new)
                if e_new < e_cur:
                    return wv_new, w_new, r_new, e_new
                step *= 0.5
            return None

        hit = try_direction(_solve_normal(m_mat, rhs))
        if hit is None:
            # ill-conditioned normal matrix (flat gradients under a weak
            # penalty) can make the raw step a non-descent direction for
            # the exact objective; retry with Levenberg damping
            scale = max(np.trace(m_mat) / m_mat.shape[0], 1e-300)
            for damp in (1e-4, 1e-2, 1.0):
                hit = try_direction(_solve_normal(
                    m_mat + damp * scale * np.eye(m_mat.shape[0]), rhs
                ))
                if hit is not None:
                    break
        if hit is None:
            break
        wv_new, w_new, r_new, e_new = hit
        steps += 1
        rel_drop = (e_cur - e_new) / max(abs(e_cur), 1e-300)
        w, wv, r, e_cur = w_new, wv_new, r_new, e_new
        trace.append(e_cur)
        if rel_drop < tol:
            break
    return w, trace, steps


def predict_warp(
    y: Image,
    template: Image,
    params: VarianceParams,
    f: CholFactor,
    w_init: DisplacementGrid,
    prior: WarpPrior | None = None,
    grad: GradientField | None = None,
    config: FitConfig = FitConfig(),
) -> tuple[DisplacementGrid, list[float]]:
    """Posterior-mode warp prediction; returns (warp, objective trace)."""
    if prior is None:
        prior = WarpPrior(params.gamma2, w_init.grid)
    if grad is None:
        grad = image_gradient(template)
    w, trace, _ = _gn_minimize(
        y,
        template,
        grad,
        w_init,
        prior.C_inv,
        f,
        config.gn_max_steps,
        config.gn_max_halvings,
        config.gn_tol,
    )
    return w, trace


def predict_intensity(
    y: Image, template: Image, w_hat: DisplacementGrid, f: CholFactor
) -> Image:
    """BLUP of the intensity field given the posterior warp:
    x_hat = S (S+I)^{-1} r = (I + S^{-1})^{-1} r."""
    r = y.vec() - resample(template, w_hat).vec()
    return Image.from_vec(y.lattice, f.solve(r))


def estimate_variances(
    images: list[Image],
    template: Image,
    w0s: list[DisplacementGrid],
    config: FitConfig = FitConfig(),
    init: tuple[float, float] | None = None,
    symbolic: Symbolic | None = None,
    threads: int = 1,
) -> tuple[VarianceParams, dict]:
    """Nelder-Mead minimization of the sigma2-profiled likelihood over
    (log tau2, log gamma2) at fixed linearization points."""
    lat = template.lattice
    grad = image_gradient(template)
    Zs = [assemble_Z(template, w0, grad) for w0 in w0s]
    if init is None:
        init = (config.init_tau2, config.init_gamma2)
    u0 = np.log(np.asarray(init, dtype=np.float64))

    def objective(u):
        t2, g2 = np.exp(np.clip(u, -40.0, 40.0))
        try:
            value, _ = profiled_nll(
                images, template, w0s, Zs, t2, g2, symbolic=symbolic, threads=threads
            )
        except NotPositiveDefiniteError:
            return np.inf
        if np.isnan(value):
            raise EstimationError(f"non-finite likelihood at tau2={t2}, gamma2={g2}")
        return value

    s = config.simplex_scale
    simplex = np.array([u0, u0 + [s, 0.0], u0 + [0.0, s]])
    res = minimize(
        objective,
        u0,
        method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "maxfev": config.nm_max_evals,
            "xatol": config.nm_xatol,
            "fatol": config.nm_fatol,
        },
    )
    tau2, gamma2 = np.exp(np.clip(res.x, -40.0, 40.0))
    _, sigma2 = profiled_nll(
        images, template, w0s, Zs, tau2, gamma2, symbolic=symbolic, threads=threads
    )
    params = VarianceParams(max(sigma2, 1e-300), tau2, gamma2)
    return params, {"nll": float(res.fun), "evaluations": int(res.nfev)}


def fit(images: list[Image], config: FitConfig = FitConfig()) -> ModelFit:
    """Full alternating inference over the image stack."""
    if len(images) < 2:
        raise ValueError("fitting requires at least 2 images")
    lat = images[0].lattice
    if any(y.lattice != lat for y in images):
        raise ValueError("all images must share one lattice")
    grid = AnchorGrid(*config.anchor_grid)
    threads = config.threads

    # the pattern of I + S^{-1} is fixed for the lattice; analyze once
    b_pattern = sp.eye(lat.m, format="csr") + assemble_precision(
        IntensityModel(1.0, lat)
    )
    symbolic = symbolic_analyze(b_pattern)

    w0s = [DisplacementGrid.zeros(grid) for _ in images]
    template = update_template(images, w0s, threads)
    tau2, gamma2 = config.init_tau2, config.init_gamma2
    trace: list[float] = []
    diagnostics: dict = {"variance_evaluations": [], "gn_steps": 0, "sweeps": 0}
    params = None
    t_start = time.perf_counter()

    for _ in range(config.outer_iters):
        params, info = estimate_variances(
            images,
            template,
            w0s,
            config,
            init=(tau2, gamma2),
            symbolic=symbolic,
            threads=threads,
        )
        tau2, gamma2 = params.tau2, params.gamma2
        diagnostics["variance_evaluations"].append(info["evaluations"])
        # the trace records the profiled nll achieved by each outer
        # iteration's estimation step (the quantity the alternation
        # monitors for stabilization)
        trace.append(info["nll"])
        f = intensity_factor(tau2, lat, symbolic)
        prior = WarpPrior(gamma2, grid)

        for _ in range(config.inner_iters):
            grad = image_gradient(template)

            def one(iw):
                y, w0 = iw
                return _gn_minimize(
                    y,
                    template,
                    grad,
                    w0,
                    prior.C_inv,
                    f,
                    config.gn_max_steps,
                    config.gn_max_halvings,
                    config.gn_tol,
                )

            results = parallel_map(one, list(zip(images, w0s)), threads)
            w0s = [r[0] for r in results]
            diagnostics["gn_steps"] += sum(r[2] for r in results)
            diagnostics["sweeps"] += 1
            template = update_template(images, w0s, threads)

        if config.early_stop_tol is not None and len(trace) >= 2:
            if abs(trace[-1] - trace[-2]) < config.early_stop_tol * abs(trace[-2]):
                break

    f = intensity_factor(params.tau2, lat, symbolic)
    intensities = parallel_map(
        lambda iw: predict_intensity(iw[0], template, iw[1], f),
        list(zip(images, w0s)),
        threads,
    )
    ps, pt = lat.node_points()
    nonconv = 0
    for w in w0s:
        _, _, conv = inverse_warp_at(w, ps, pt)
        nonconv += int((~conv).sum())
    diagnostics["fold_counts"] = [fold_count(w) for w in w0s]
    diagnostics["inverse_warp_nonconverged"] = nonconv
    diagnostics["seconds"] = time.perf_counter() - t_start
    return ModelFit(
        template=template,
        params=params,
        warps=w0s,
        intensities=intensities,
        nll_trace=trace,
        diagnostics=diagnostics,
    )


def reconstruct(fit_result: ModelFit, index: int) -> Image:
    """Warped template plus the predicted intensity field for one image."""
    warped = resample(fit_result.template, fit_result.warps[index])
    return Image(
        warped.lattice, warped.values + fit_result.intensities[index].values
    )
