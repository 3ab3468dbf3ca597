"""Shared test fixtures and independent oracles.

The oracles here deliberately avoid the package's computational paths:
dense covariance matrices come straight from the kernel formula, log
determinants from numpy eigen/slogdet routines, and the dense nll from
explicit multivariate-normal algebra.
"""

import numpy as np

from warpmix import Image, make_lattice
from warpmix.warp import resample


def dense_intensity_cov(lattice, tau2: float) -> np.ndarray:
    """Covariance matrix of the tied-down Brownian sheet on the lattice,
    built entrywise from the kernel formula (row-major node order)."""
    s = lattice.s_coords
    t = lattice.t_coords
    k1 = np.minimum.outer(s, s) - np.outer(s, s)
    k2 = np.minimum.outer(t, t) - np.outer(t, t)
    return tau2 * np.kron(k1, k2)


def kron_eig_logdet(tau2: float, m1: int, m2: int) -> float:
    """Exact log det(S + I) from the Kronecker eigenvalues of S."""
    j1 = np.arange(1, m1 + 1)
    j2 = np.arange(1, m2 + 1)
    lam1 = 1.0 / ((m1 + 1) * 4.0 * np.sin(np.pi * j1 / (2 * (m1 + 1))) ** 2)
    lam2 = 1.0 / ((m2 + 1) * 4.0 * np.sin(np.pi * j2 / (2 * (m2 + 1))) ** 2)
    return float(np.log1p(tau2 * np.outer(lam1, lam2)).sum())


def dense_nll(images, template, w0s, Zs, params, logdet_si=None) -> float:
    """Explicit dense multivariate-normal negative log-likelihood of the
    linearized model (2 pi constant dropped, matching the implementation)."""
    lat = template.lattice
    m = lat.m
    S = dense_intensity_cov(lat, params.tau2)
    grid = w0s[0].grid
    s_a = grid.s_anchors
    t_a = grid.t_anchors
    k1 = np.minimum.outer(s_a, s_a) - np.outer(s_a, s_a)
    k2 = np.minimum.outer(t_a, t_a) - np.outer(t_a, t_a)
    K = np.kron(k1, k2)
    z = np.zeros_like(K)
    C = params.gamma2 * np.block([[K, z], [z, K]])
    ld_si = np.linalg.slogdet(S + np.eye(m))[1] if logdet_si is None else logdet_si

    total = 0.5 * len(images) * m * np.log(params.sigma2)
    for y, w0, Z in zip(images, w0s, Zs):
        Zd = Z.toarray()
        V = Zd @ C @ Zd.T + S + np.eye(m)
        r = y.vec() - resample(template, w0).vec() + Zd @ w0.vec()
        sign, ld = np.linalg.slogdet(V)
        assert sign > 0
        total += 0.5 * ld + r @ np.linalg.solve(V, r) / (2.0 * params.sigma2)
    return float(total)


def sinusoid_template(lat) -> Image:
    """Smooth synthetic template: sum of low-frequency sinusoids."""
    ss, tt = lat.node_points()
    vals = (
        0.5
        + 0.22 * np.sin(2 * np.pi * ss) * np.sin(2 * np.pi * tt)
        + 0.12 * np.sin(np.pi * ss) * np.sin(3 * np.pi * tt)
        + 0.08 * np.cos(3 * np.pi * ss) * np.sin(np.pi * tt)
    )
    return Image.from_vec(lat, vals)


def phantom_template(lat) -> Image:
    """Smooth synthetic subject on a background: a steep-edged disk with
    an inner ring and low-frequency internal texture (all C^inf), values
    in [0, 1]. Feature-rich like the real slices the generative study
    mimics, so warps are identifiable."""
    ss, tt = lat.node_points()
    r = np.sqrt((ss - 0.5) ** 2 + (tt - 0.5) ** 2)
    disk = 1.0 / (1.0 + np.exp((r - 0.33) / 0.015))
    ring = 0.35 * np.exp(-(((r - 0.22) / 0.03) ** 2))
    tex = 0.18 * np.sin(7 * np.pi * ss) * np.sin(6 * np.pi * tt) * disk
    vals = 0.12 + 0.55 * disk + ring * disk + tex
    return Image.from_vec(lat, np.clip(vals, 0.0, 1.0))


def disk_mask(lat, radius: float = 0.36) -> Image:
    ss, tt = lat.node_points()
    inside = np.sqrt((ss - 0.5) ** 2 + (tt - 0.5) ** 2) <= radius
    return Image.from_vec(lat, inside.astype(np.float64))


def full_mask(lat) -> Image:
    return Image(lat, np.ones((lat.m1, lat.m2)))
