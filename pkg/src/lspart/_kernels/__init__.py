"""Univariate basis kernels with a compiled fast path.

The compiled Cython module is preferred when it imported cleanly; setting
``LSPART_PURE_PYTHON=1`` forces the NumPy fallback. Both implementations are
required to produce identical results (see tests/test_kernels.py).
"""

import os

from . import _pykernels

if os.environ.get("LSPART_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _speedups as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

bspline_local = _impl.bspline_local
piecewise_local = _impl.piecewise_local


def backend() -> str:
    """Name of the active kernel backend: 'cython' or 'python'."""
    return BACKEND
