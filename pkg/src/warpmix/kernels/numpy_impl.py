"""Pure-numpy reference implementations of the hot evaluation kernels.

All kernels operate on flat coordinate arrays in unit-square coordinates.
Image lattices place node (j, k) at ((j+1)/(m1+1), (k+1)/(m2+1)); anchor
grids do the same with (mw1, mw2). Displacement fields are extended by
zero on (and beyond) the boundary of the unit square, image values by
clamp-to-edge.

The numba twin in ``numba_impl`` mirrors the arithmetic expression order
so both backends agree to rounding.
"""

import numpy as np


def bilinear_batch(values: np.ndarray, ps: np.ndarray, pt: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a lattice image at points (ps, pt)."""
    m1, m2 = values.shape
    u = np.clip(ps * (m1 + 1.0) - 1.0, 0.0, m1 - 1.0)
    v = np.clip(pt * (m2 + 1.0) - 1.0, 0.0, m2 - 1.0)
    j = np.minimum(u.astype(np.int64), m1 - 2)
    k = np.minimum(v.astype(np.int64), m2 - 2)
    fu = u - j
    fv = v - k
    return (
        (1.0 - fu) * (1.0 - fv) * values[j, k]
        + (1.0 - fu) * fv * values[j, k + 1]
        + fu * (1.0 - fv) * values[j + 1, k]
        + fu * fv * values[j + 1, k + 1]
    )


def displacement_batch(
    ws: np.ndarray, wt: np.ndarray, ps: np.ndarray, pt: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the interpolated displacement field at points (ps, pt).

    ``ws``/``wt`` hold per-anchor displacements on the interior anchor
    grid; the field is zero on the boundary of the unit square and beyond.
    """
    mw1, mw2 = ws.shape
    x = np.clip(ps * (mw1 + 1.0), 0.0, mw1 + 1.0)
    y = np.clip(pt * (mw2 + 1.0), 0.0, mw2 + 1.0)
    c1 = np.minimum(x.astype(np.int64), mw1)
    c2 = np.minimum(y.astype(np.int64), mw2)
    f1 = x - c1
    f2 = y - c2
    wsp = np.zeros((mw1 + 2, mw2 + 2))
    wtp = np.zeros((mw1 + 2, mw2 + 2))
    wsp[1:-1, 1:-1] = ws
    wtp[1:-1, 1:-1] = wt
    w00 = (1.0 - f1) * (1.0 - f2)
    w01 = (1.0 - f1) * f2
    w10 = f1 * (1.0 - f2)
    w11 = f1 * f2
    ds = (
        w00 * wsp[c1, c2]
        + w01 * wsp[c1, c2 + 1]
        + w10 * wsp[c1 + 1, c2]
        + w11 * wsp[c1 + 1, c2 + 1]
    )
    dt = (
        w00 * wtp[c1, c2]
        + w01 * wtp[c1, c2 + 1]
        + w10 * wtp[c1 + 1, c2]
        + w11 * wtp[c1 + 1, c2 + 1]
    )
    return ds, dt


def basis_batch(
    mw1: int, mw2: int, ps: np.ndarray, pt: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear anchor weights at points (ps, pt).

    Returns (idx, wgt) of shape (N, 4): flat row-major anchor indices and
    their weights. Corners falling on the zero-displacement boundary ring
    (or outside the unit square) get index -1.
    """
    n = ps.shape[0]
    x = np.clip(ps * (mw1 + 1.0), 0.0, mw1 + 1.0)
    y = np.clip(pt * (mw2 + 1.0), 0.0, mw2 + 1.0)
    c1 = np.minimum(x.astype(np.int64), mw1)
    c2 = np.minimum(y.astype(np.int64), mw2)
    f1 = x - c1
    f2 = y - c2
    idx = np.full((n, 4), -1, dtype=np.int64)
    wgt = np.empty((n, 4))
    wgt[:, 0] = (1.0 - f1) * (1.0 - f2)
    wgt[:, 1] = (1.0 - f1) * f2
    wgt[:, 2] = f1 * (1.0 - f2)
    wgt[:, 3] = f1 * f2
    for m, (dr, dc) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        ar = c1 + dr - 1
        ac = c2 + dc - 1
        ok = (ar >= 0) & (ar < mw1) & (ac >= 0) & (ac < mw2)
        idx[ok, m] = ar[ok] * mw2 + ac[ok]
    return idx, wgt


def inverse_warp_batch(
    ws: np.ndarray,
    wt: np.ndarray,
    ps: np.ndarray,
    pt: np.ndarray,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fixed-point inversion u <- p - E_w(u), one point per entry.

    Each point iterates independently until the sup-norm update falls
    below ``tol`` or ``max_iter`` iterations elapse; the returned flag
    marks convergence.
    """
    us = ps.copy()
    ut = pt.copy()
    conv = np.zeros(ps.shape[0], dtype=np.bool_)
    for _ in range(max_iter):
        act = ~conv
        if not act.any():
            break
        ds, dt = displacement_batch(ws, wt, us[act], ut[act])
        nu = ps[act] - ds
        nv = pt[act] - dt
        delta = np.maximum(np.abs(nu - us[act]), np.abs(nv - ut[act]))
        us[act] = nu
        ut[act] = nv
        conv[act] = delta < tol
    return us, ut, conv
