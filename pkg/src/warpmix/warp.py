"""Warping functions built from displacement vectors at anchor points.

A warp v(p, w) = p + E_w(p) where E_w interpolates the per-anchor
displacements coordinate-wise bilinearly. Anchors form an interior
equidistant grid; the field is extended by zero displacement on the
boundary of the unit square, so warps are the identity there.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ImageFormatError, InvalidDimensionError, InvalidPointError
from .grid import Image, interp_at

INVERSE_WARP_TOL = 1e-8
INVERSE_WARP_MAX_ITER = 20


@dataclass(frozen=True)
class AnchorGrid:
    mw1: int
    mw2: int

    def __post_init__(self):
        if self.mw1 < 1 or self.mw2 < 1:
            raise InvalidDimensionError(
                f"anchor grid dimensions must be >= 1, got ({self.mw1}, {self.mw2})"
            )

    @property
    def n_anchors(self) -> int:
        return self.mw1 * self.mw2

    @property
    def q(self) -> int:
        """Length of the vectorized displacement: 2 * mw1 * mw2."""
        return 2 * self.n_anchors

    @property
    def s_anchors(self) -> np.ndarray:
        return np.arange(1, self.mw1 + 1) / (self.mw1 + 1.0)

    @property
    def t_anchors(self) -> np.ndarray:
        return np.arange(1, self.mw2 + 1) / (self.mw2 + 1.0)

    def anchor_points(self) -> tuple[np.ndarray, np.ndarray]:
        aa, bb = np.meshgrid(self.s_anchors, self.t_anchors, indexing="ij")
        return aa.ravel(), bb.ravel()


@dataclass(frozen=True, eq=False)
class DisplacementGrid:
    grid: AnchorGrid
    w: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.ascontiguousarray(self.w, dtype=np.float64)
        if w.shape != (self.grid.mw1, self.grid.mw2, 2):
            raise InvalidDimensionError(
                f"displacement shape {w.shape} does not match grid "
                f"({self.grid.mw1}, {self.grid.mw2}, 2)"
            )
        if not np.all(np.isfinite(w)):
            raise InvalidPointError("displacements must be finite")
        object.__setattr__(self, "w", w)

    @classmethod
    def zeros(cls, grid: AnchorGrid) -> "DisplacementGrid":
        return cls(grid, np.zeros((grid.mw1, grid.mw2, 2)))

    def vec(self) -> np.ndarray:
        """[all s-displacements row-major, then all t-displacements]."""
        return np.concatenate([self.w[..., 0].ravel(), self.w[..., 1].ravel()])

    @classmethod
    def from_vec(cls, grid: AnchorGrid, v: np.ndarray) -> "DisplacementGrid":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (grid.q,):
            raise InvalidDimensionError(
                f"vector length {v.shape} does not match grid q={grid.q}"
            )
        w = np.empty((grid.mw1, grid.mw2, 2))
        w[..., 0] = v[: grid.n_anchors].reshape(grid.mw1, grid.mw2)
        w[..., 1] = v[grid.n_anchors :].reshape(grid.mw1, grid.mw2)
        return cls(grid, w)


def displacement_at(
    w: DisplacementGrid, ps: np.ndarray, pt: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Batch evaluation of the displacement field E_w."""
    return kernels.displacement_batch(w.w[..., 0], w.w[..., 1], ps, pt)


def eval_warp(w: DisplacementGrid, p) -> np.ndarray:
    """v(p, w) = p + E_w(p) at a single point."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise InvalidPointError(f"invalid warp evaluation point {p!r}")
    ds, dt = displacement_at(w, p[:1], p[1:2])
    return np.array([p[0] + ds[0], p[1] + dt[0]])


def warp_basis(grid: AnchorGrid, p) -> list[tuple[int, float]]:
    """Nonzero bilinear anchor weights of the warp Jacobian at p.

    Weights are independent of the displacements (v is linear in w); at
    most 4 anchors contribute, and boundary points get no interior weight.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise InvalidPointError(f"invalid basis point {p!r}")
    idx, wgt = kernels.basis_batch(grid.mw1, grid.mw2, p[:1], p[1:2])
    return [
        (int(a), float(x)) for a, x in zip(idx[0], wgt[0]) if a >= 0 and x > 0.0
    ]


def basis_at(
    grid: AnchorGrid, ps: np.ndarray, pt: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Batch anchor indices/weights; pad corners are marked with index -1."""
    return kernels.basis_batch(grid.mw1, grid.mw2, ps, pt)


def inverse_warp(
    w: DisplacementGrid,
    p,
    tol: float = INVERSE_WARP_TOL,
    max_iter: int = INVERSE_WARP_MAX_ITER,
) -> tuple[np.ndarray, bool]:
    """Approximate v^{-1}(p) by fixed-point iteration u <- p - E_w(u).

    Returns the last iterate and a convergence flag; non-convergence is
    reported, not raised.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise InvalidPointError(f"invalid inverse-warp point {p!r}")
    us, ut, conv = kernels.inverse_warp_batch(
        w.w[..., 0], w.w[..., 1], p[:1], p[1:2], tol, max_iter
    )
    return np.array([us[0], ut[0]]), bool(conv[0])


def inverse_warp_at(
    w: DisplacementGrid,
    ps: np.ndarray,
    pt: np.ndarray,
    tol: float = INVERSE_WARP_TOL,
    max_iter: int = INVERSE_WARP_MAX_ITER,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return kernels.inverse_warp_batch(
        w.w[..., 0], w.w[..., 1], ps, pt, tol, max_iter
    )


def resample(template: Image, w: DisplacementGrid) -> Image:
    """The warped template theta^w: theta(v(node, w)) at every node."""
    ps, pt = template.lattice.node_points()
    ds, dt = displacement_at(w, ps, pt)
    vals = interp_at(template, ps + ds, pt + dt)
    return Image(template.lattice, vals.reshape(template.lattice.m1, template.lattice.m2))


def fold_count(w: DisplacementGrid) -> int:
    """Number of anchor cells whose bilinear warp has a negative Jacobian
    determinant at some cell corner (diagnostic only; folds are allowed)."""
    mw1, mw2 = w.grid.mw1, w.grid.mw2
    h1 = 1.0 / (mw1 + 1)
    h2 = 1.0 / (mw2 + 1)
    pad = np.zeros((mw1 + 2, mw2 + 2, 2))
    pad[1:-1, 1:-1] = w.w
    # derivative of E within a cell, evaluated at its four corners
    d_s = (pad[1:, :, :] - pad[:-1, :, :]) / h1  # (mw1+1, mw2+2, 2)
    d_t = (pad[:, 1:, :] - pad[:, :-1, :]) / h2  # (mw1+2, mw2+1, 2)
    folded = 0
    for ci in range(mw1 + 1):
        for cj in range(mw2 + 1):
            bad = False
            for fi in range(2):
                for fj in range(2):
                    es = d_s[ci, cj + fj]  # dE/ds at corner (fi, fj)
                    et = d_t[ci + fi, cj]
                    det = (1.0 + es[0]) * (1.0 + et[1]) - es[1] * et[0]
                    if det < 0.0:
                        bad = True
            folded += bad
    return folded


def save_displacements_csv(w: DisplacementGrid, path) -> None:
    """CSV with header row,col,ds,dt; one line per anchor, row-major,
    1-based indices."""
    with open(path, "w", newline="") as fh:
        fh.write("row,col,ds,dt\n")
        for i in range(w.grid.mw1):
            for j in range(w.grid.mw2):
                fh.write(
                    f"{i + 1},{j + 1},{float(w.w[i, j, 0])!r},{float(w.w[i, j, 1])!r}\n"
                )


def load_displacements_csv(path, grid: AnchorGrid | None = None) -> DisplacementGrid:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["row", "col", "ds", "dt"]:
            raise ImageFormatError(f"{path}: bad displacement CSV header {header!r}")
        rows = [r for r in reader if r]
    try:
        entries = [(int(r[0]), int(r[1]), float(r[2]), float(r[3])) for r in rows]
    except (ValueError, IndexError):
        raise ImageFormatError(f"{path}: malformed displacement CSV row") from None
    if not entries:
        raise ImageFormatError(f"{path}: empty displacement CSV")
    mw1 = max(e[0] for e in entries)
    mw2 = max(e[1] for e in entries)
    if grid is None:
        grid = AnchorGrid(mw1, mw2)
    elif (grid.mw1, grid.mw2) != (mw1, mw2):
        raise ImageFormatError(
            f"{path}: grid ({mw1}, {mw2}) does not match expected "
            f"({grid.mw1}, {grid.mw2})"
        )
    if len(entries) != mw1 * mw2:
        raise ImageFormatError(f"{path}: expected {mw1 * mw2} rows, got {len(entries)}")
    w = np.zeros((mw1, mw2, 2))
    for i, j, ds, dt in entries:
        w[i - 1, j - 1] = (ds, dt)
    return DisplacementGrid(grid, w)
