"""Hot raster kernels with two interchangeable backends.

The numba backend JIT-compiles the scalar inner loops; the numpy backend
is a pure-vectorized fallback. Selection happens once at import time:

  * set MVBALL_NO_NUMBA=1 in the environment to force the numpy backend;
  * otherwise numba is used when importable, numpy when not.

Both backends produce identical results (the test suite asserts parity),
so everything above this package is backend-agnostic. `mvball bench`
compares their throughput.
"""

from __future__ import annotations

import os

from . import numpy_impl

_flag = os.environ.get("MVBALL_NO_NUMBA", "").strip().lower()
_numpy_forced = _flag in {"1", "true", "yes", "on"}

if _numpy_forced:
    _impl = numpy_impl
    BACKEND = "numpy"
else:
    try:
        from . import numba_impl as _impl  # noqa: F401

        BACKEND = "numba"
    except ImportError:
        _impl = numpy_impl
        BACKEND = "numpy"

label_components = _impl.label_components
ncc_scan = _impl.ncc_scan
resize_bilinear = _impl.resize_bilinear

__all__ = ["BACKEND", "label_components", "ncc_scan", "resize_bilinear", "numpy_impl"]
