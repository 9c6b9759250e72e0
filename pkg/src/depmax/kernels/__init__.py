"""Backend dispatch for the hot numeric kernels.

Two interchangeable implementations exist: `numba_impl` (JIT-compiled
loops) and `numpy_impl` (vectorized fallback). The active one is chosen
once at import time by the DEPMAX_BACKEND environment variable:

    DEPMAX_BACKEND=numba   require the JIT backend (default when available)
    DEPMAX_BACKEND=numpy   force the pure-numpy fallback

FFT- and BLAS-bound paths (scattering, pairwise distances) are not
dispatched here; numpy already runs those through optimized libraries.
"""

import os

from ..errors import ConfigError
from . import numpy_impl

_requested = os.environ.get("DEPMAX_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise ConfigError(
        f"DEPMAX_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    _impl = numpy_impl
    BACKEND = "numpy"
else:
    try:
        from . import numba_impl as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = numpy_impl
        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward_x = _impl.conv2d_backward_x
conv2d_backward_w = _impl.conv2d_backward_w
lsd2d = _impl.lsd2d
hog_cells = _impl.hog_cells
