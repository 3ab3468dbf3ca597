"""Linearized-model likelihood machinery.

For each image the linearized model has covariance (up to the common
residual variance) V = Z C Z^T + S + I. All heavy operations avoid
forming V: the (S+I)^{-1} action uses the sparse identity
(S+I)^{-1} = I - (I+S^{-1})^{-1}, quadratic forms use the Woodbury
identity through the small q x q matrix M = C^{-1} + Z^T (S+I)^{-1} Z,
and log det V splits via the matrix determinant lemma into
log det M + log det C + log det(S+I), the last term coming from the
sinh-series approximation unless an exact value is supplied.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .errors import DegenerateFitError, NotPositiveDefiniteError
from .gmrf import IntensityModel, WarpPrior, assemble_precision, logdet_intensity
from .grid import GradientField, Image, image_gradient, interp_at
from .solver import CholFactor, Symbolic, factorize
from .warp import DisplacementGrid, basis_at, displacement_at

# lower bound on the profiled noise variance; keeps degenerate
# (zero-residual) stacks finite without masking real data
_SIGMA2_FLOOR = 1e-300


@dataclass(frozen=True)
class VarianceParams:
    """(sigma2, tau2, gamma2): residual variance and the relative scales
    of the intensity and warp priors (covariances sigma2*S, sigma2*C)."""

    sigma2: float
    tau2: float
    gamma2: float

    def __post_init__(self):
        for name in ("sigma2", "tau2", "gamma2"):
            v = float(getattr(self, name))
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)

    def require_positive(self) -> "VarianceParams":
        for name in ("sigma2", "tau2", "gamma2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive here")
        return self

    @property
    def sigma2_tau2(self) -> float:
        return self.sigma2 * self.tau2

    @property
    def sigma2_gamma2(self) -> float:
        return self.sigma2 * self.gamma2


def parallel_map(fn, items, threads: int = 1) -> list:
    """Order-preserving map, optionally on a thread pool.

    Results are collected by index and reduced by callers in a fixed
    order, so the thread count never changes numerical output.
    """
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def intensity_factor(
    tau2: float, lattice, symbolic: Symbolic | None = None
) -> CholFactor:
    """Factorize B = I + S^{-1} on the lattice at scale tau2."""
    prec = assemble_precision(IntensityModel(tau2, lattice))
    b = (sp.eye(lattice.m, format="csr") + prec).tocsr()
    return factorize(b, symbolic)


def apply_Ainv(f: CholFactor, r: np.ndarray) -> np.ndarray:
    """(S + I)^{-1} r = r - (I + S^{-1})^{-1} r; r may hold columns."""
    return r - f.solve(r)


def assemble_Z(
    template: Image, w0: DisplacementGrid, grad: GradientField | None = None
) -> sp.csr_matrix:
    """Sparse m x q Jacobian of the warped template w.r.t. displacements.

    Row r couples lattice node r to the anchors supporting it: the
    gradient of the template, interpolated at the warped node, times the
    bilinear anchor weight; s-displacement columns first, then t.
    """
    lat = template.lattice
    if grad is None:
        grad = image_gradient(template)
    ps, pt = lat.node_points()
    ds, dt = displacement_at(w0, ps, pt)
    gs = interp_at(grad.d_s, ps + ds, pt + dt)
    gt = interp_at(grad.d_t, ps + ds, pt + dt)
    idx, wgt = basis_at(w0.grid, ps, pt)
    na = w0.grid.n_anchors
    keep = idx >= 0
    rows = np.broadcast_to(np.arange(lat.m)[:, None], idx.shape)[keep]
    cols = idx[keep]
    wk = wgt[keep]
    data = np.concatenate([wk * gs[rows], wk * gt[rows]])
    all_rows = np.concatenate([rows, rows])
    all_cols = np.concatenate([cols, cols + na])
    z = sp.coo_matrix((data, (all_rows, all_cols)), shape=(lat.m, 2 * na))
    return z.tocsr()


def _chol_psd(mat: np.ndarray, what: str):
    try:
        return cho_factor(mat, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"{what} is not positive definite") from exc


def _woodbury_terms(
    f: CholFactor, Z: sp.csr_matrix, Cinv: np.ndarray, r: np.ndarray
) -> tuple[float, float, np.ndarray]:
    """(r^T V^{-1} r, log det M, A^{-1} r) for one image."""
    x = apply_Ainv(f, r)
    ainv_z = apply_Ainv(f, Z.toarray())
    m_mat = Cinv + Z.T @ ainv_z
    cm = _chol_psd(m_mat, "C^{-1} + Z^T (S+I)^{-1} Z")
    ztx = Z.T @ x
    quad = float(r @ x - ztx @ cho_solve(cm, ztx))
    logdet_m = 2.0 * float(np.log(np.diag(cm[0])).sum())
    return quad, logdet_m, x


def quad_form_Vinv(
    f: CholFactor, Z: sp.csr_matrix, Cinv: np.ndarray, r: np.ndarray
) -> float:
    """r^T V^{-1} r via the Woodbury identity (V at unit residual scale)."""
    quad, _, _ = _woodbury_terms(f, Z, Cinv, r)
    return quad


def logdet_V(
    f: CholFactor,
    Z: sp.csr_matrix,
    C: np.ndarray,
    tau2: float,
    m1: int,
    m2: int,
    logdet_si: float | None = None,
) -> float:
    """log det V by the matrix determinant lemma.

    ``logdet_si`` overrides the series approximation of log det(S+I)
    (used when comparing against dense oracles).
    """
    cc = _chol_psd(C, "warp covariance C")
    ld_c = 2.0 * float(np.log(np.diag(cc[0])).sum())
    cinv = cho_solve(cc, np.eye(C.shape[0]))
    _, ld_m, _ = _woodbury_terms(f, Z, cinv, np.zeros(Z.shape[0]))
    ld_si = logdet_intensity(tau2, m1, m2) if logdet_si is None else logdet_si
    return ld_m + ld_c + ld_si


def residual_vector(
    y: Image, template: Image, w0: DisplacementGrid, Z: sp.csr_matrix
) -> np.ndarray:
    """r = y - theta^{w0} + Z w0 for the linearized model."""
    from .warp import resample

    return y.vec() - resample(template, w0).vec() + Z @ w0.vec()


def _nll_totals(
    rs: list[np.ndarray],
    Zs: list[sp.csr_matrix],
    prior: WarpPrior,
    tau2: float,
    lattice,
    symbolic: Symbolic | None,
    logdet_si: float | None,
    threads: int = 1,
) -> tuple[float, float]:
    """(sum of quadratic forms, sum of log det V) over images.

    Exactly one sparse factorization of I + S^{-1} per call, shared by
    all images.
    """
    f = intensity_factor(tau2, lattice, symbolic)
    cinv = prior.C_inv
    ld_si = (
        logdet_intensity(tau2, lattice.m1, lattice.m2)
        if logdet_si is None
        else logdet_si
    )
    per_image = parallel_map(
        lambda rz: _woodbury_terms(f, rz[1], cinv, rz[0])[:2],
        list(zip(rs, Zs)),
        threads,
    )
    quad_total = 0.0
    logdet_total = 0.0
    for quad, ld_m in per_image:
        quad_total += quad
        logdet_total += ld_m + prior.logdet_C + ld_si
    return quad_total, logdet_total


def nll(
    images: list[Image],
    template: Image,
    w0s: list[DisplacementGrid],
    Zs: list[sp.csr_matrix],
    params: VarianceParams,
    symbolic: Symbolic | None = None,
    logdet_si: float | None = None,
    threads: int = 1,
) -> float:
    """Negative log-likelihood of the linearized model (2 pi constant dropped)."""
    params.require_positive()
    lat = template.lattice
    if any(y.lattice != lat for y in images):
        raise ValueError("all images must share the template lattice")
    if not (len(images) == len(w0s) == len(Zs)):
        raise ValueError("images, w0s and Zs must have matching lengths")
    prior = WarpPrior(params.gamma2, w0s[0].grid)
    rs = [residual_vector(y, template, w0, Z) for y, w0, Z in zip(images, w0s, Zs)]
    quad, ld = _nll_totals(rs, Zs, prior, params.tau2, lat, symbolic, logdet_si, threads)
    n, m = len(images), lat.m
    return 0.5 * n * m * np.log(params.sigma2) + 0.5 * ld + quad / (2.0 * params.sigma2)


def profile_sigma2(quad_total: float, n: int, m: int) -> float:
    """Closed-form minimizer of the likelihood over sigma2.

    Valid because V does not depend on sigma2; quad_total must be the sum
    of quadratic forms at unit residual scale.
    """
    if quad_total < 0:
        raise ValueError(f"quad_total must be >= 0, got {quad_total}")
    if quad_total == 0:
        raise DegenerateFitError("zero residual quadratic form; sigma2 undefined")
    return quad_total / (n * m)


def profiled_nll(
    images: list[Image],
    template: Image,
    w0s: list[DisplacementGrid],
    Zs: list[sp.csr_matrix],
    tau2: float,
    gamma2: float,
    symbolic: Symbolic | None = None,
    logdet_si: float | None = None,
    threads: int = 1,
) -> tuple[float, float]:
    """(profiled negative log-likelihood, profiled sigma2).

    The noise variance is floored at a tiny value so degenerate
    zero-residual stacks stay finite.
    """
    lat = template.lattice
    prior = WarpPrior(gamma2, w0s[0].grid)
    rs = [residual_vector(y, template, w0, Z) for y, w0, Z in zip(images, w0s, Zs)]
    quad, ld = _nll_totals(rs, Zs, prior, tau2, lat, symbolic, logdet_si, threads)
    n, m = len(images), lat.m
    sigma2 = max(quad / (n * m), _SIGMA2_FLOOR)
    value = 0.5 * n * m * (np.log(sigma2) + 1.0) + 0.5 * ld
    return float(value), float(sigma2)
