"""Backend selection for the hot kernels.

Set ``TRAJDIFF_BACKEND=numpy`` to force the pure-numpy fallback, or
``TRAJDIFF_BACKEND=numba`` to require the jit path (import error if numba is
missing). Default: numba when importable, numpy otherwise. Both backends
compute the same quantities; they differ only in floating-point summation
order, so agreement is to rounding, not bit-exact.
"""

from __future__ import annotations

import os

from . import numpy_impl

_requested = os.environ.get("TRAJDIFF_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ImportError(f"TRAJDIFF_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    _impl = numpy_impl
    BACKEND = "numpy"
else:
    try:
        from . import numba_impl as _impl  # noqa: F401

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = numpy_impl
        BACKEND = "numpy"

attention = _impl.attention
cross_guided = _impl.cross_guided
self_guided = _impl.self_guided
conv3x3 = _impl.conv3x3
tconv3 = _impl.tconv3
