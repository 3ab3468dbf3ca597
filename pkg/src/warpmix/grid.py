"""Regular interior lattices on the unit square and grayscale images on them.

A lattice of size (m1, m2) has nodes (s_j, t_k) = (j/(m1+1), k/(m2+1)) for
j = 1..m1, k = 1..m2, i.e. equidistant interior points of [0,1]^2. Images
store one value per node, row-major: flat index r = (j-1)*m2 + (k-1).
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidDimensionError, InvalidPointError


@dataclass(frozen=True)
class Lattice:
    m1: int
    m2: int

    def __post_init__(self):
        if self.m1 < 2 or self.m2 < 2:
            raise InvalidDimensionError(
                f"lattice dimensions must be >= 2, got ({self.m1}, {self.m2})"
            )

    @property
    def m(self) -> int:
        return self.m1 * self.m2

    @property
    def s_coords(self) -> np.ndarray:
        return np.arange(1, self.m1 + 1) / (self.m1 + 1.0)

    @property
    def t_coords(self) -> np.ndarray:
        return np.arange(1, self.m2 + 1) / (self.m2 + 1.0)

    @property
    def spacing(self) -> tuple[float, float]:
        return 1.0 / (self.m1 + 1), 1.0 / (self.m2 + 1)

    def node_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat row-major arrays of all node coordinates."""
        ss, tt = np.meshgrid(self.s_coords, self.t_coords, indexing="ij")
        return ss.ravel(), tt.ravel()


def make_lattice(m1: int, m2: int) -> Lattice:
    return Lattice(m1, m2)


@dataclass(frozen=True, eq=False)
class Image:
    lattice: Lattice
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != (self.lattice.m1, self.lattice.m2):
            raise InvalidDimensionError(
                f"value shape {v.shape} does not match lattice "
                f"({self.lattice.m1}, {self.lattice.m2})"
            )
        object.__setattr__(self, "values", v)

    def vec(self) -> np.ndarray:
        return self.values.reshape(-1)

    @classmethod
    def from_vec(cls, lattice: Lattice, v: np.ndarray) -> "Image":
        return cls(lattice, np.asarray(v).reshape(lattice.m1, lattice.m2))


def image_from_values(values: np.ndarray) -> Image:
    values = np.asarray(values, dtype=np.float64)
    return Image(Lattice(*values.shape), values)


@dataclass(frozen=True)
class GradientField:
    d_s: Image
    d_t: Image


def interp_bilinear(img: Image, p) -> float:
    """Bilinear interpolation at a single point, clamp-to-edge outside."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise InvalidPointError(f"invalid evaluation point {p!r}")
    return float(
        kernels.bilinear_batch(img.values, p[:1], p[1:2])[0]
    )


def interp_at(img: Image, ps: np.ndarray, pt: np.ndarray) -> np.ndarray:
    """Batch bilinear interpolation (no per-point validation)."""
    return kernels.bilinear_batch(img.values, ps, pt)


def _diff_axis0(v: np.ndarray, h: float) -> np.ndarray:
    # central differences inside, second-order one-sided at the edges
    # (two-point when only two rows exist)
    n = v.shape[0]
    g = np.empty_like(v)
    g[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    if n >= 3:
        g[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
        g[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    else:
        g[0] = (v[1] - v[0]) / h
        g[-1] = (v[-1] - v[-2]) / h
    return g


def image_gradient(img: Image) -> GradientField:
    """Discrete gradient w.r.t. the unit-square coordinates."""
    hs, ht = img.lattice.spacing
    gs = _diff_axis0(img.values, hs)
    gt = _diff_axis0(img.values.T, ht).T
    return GradientField(Image(img.lattice, gs), Image(img.lattice, gt))
