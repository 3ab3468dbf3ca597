"""Exception types shared across the package."""


class WarpmixError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(WarpmixError, ValueError):
    """Lattice or grid dimensions outside the supported range."""


class InvalidPointError(WarpmixError, ValueError):
    """Non-finite or otherwise unusable evaluation point."""


class ImageFormatError(WarpmixError, ValueError):
    """Unsupported, corrupt, or degenerate image file."""


class NotPositiveDefiniteError(WarpmixError):
    """A matrix required to be SPD failed its Cholesky factorization.

    ``pivot`` is the index (in the original matrix ordering) of the first
    non-positive pivot, when known.
    """

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class EstimationError(WarpmixError):
    """Variance estimation or warp prediction failed to produce a result."""


class DegenerateFitError(EstimationError):
    """Zero residual variation; the profiled noise variance is undefined."""


class ConfigError(WarpmixError, ValueError):
    """Malformed run configuration or parameter file."""
