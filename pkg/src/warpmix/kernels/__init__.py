"""Kernel backend selection.

The numba backend is used when importable; set ``WARPMIX_KERNELS=numpy``
to force the pure-numpy path (or ``numba`` to make a missing numba an
import error). ``BACKEND`` reports the active choice.
"""

import os

_choice = os.environ.get("WARPMIX_KERNELS", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ImportError(
        f"WARPMIX_KERNELS must be 'auto', 'numba' or 'numpy', got {_choice!r}"
    )

if _choice == "numpy":
    from .numpy_impl import (
        basis_batch,
        bilinear_batch,
        displacement_batch,
        inverse_warp_batch,
    )

    BACKEND = "numpy"
else:
    try:
        from .numba_impl import (
            basis_batch,
            bilinear_batch,
            displacement_batch,
            inverse_warp_batch,
        )

        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        from .numpy_impl import (
            basis_batch,
            bilinear_batch,
            displacement_batch,
            inverse_warp_batch,
        )

        BACKEND = "numpy"

__all__ = [
    "BACKEND",
    "basis_batch",
    "bilinear_batch",
    "displacement_batch",
    "inverse_warp_batch",
]
