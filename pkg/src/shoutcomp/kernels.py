"""Kernel backend selection.

The compiled extension is used when it was built and importable; otherwise
the numpy fallback is used. Setting ``SHOUTCOMP_PURE_PYTHON=1`` forces the
fallback.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("SHOUTCOMP_PURE_PYTHON", "") not in ("", "0"):
    _ext = None
else:
    try:
        from . import _kernels as _ext
    except ImportError:
        _ext = None

BACKEND = "cython" if _ext is not None else "python"
_impl = _ext if _ext is not None else _kernels_py


def log_joint(X, means, variances, log_weights):
    return _impl.log_joint(np.ascontiguousarray(X, dtype=np.float64),
                           np.ascontiguousarray(means, dtype=np.float64),
                           np.ascontiguousarray(variances, dtype=np.float64),
                           np.ascontiguousarray(log_weights, dtype=np.float64))


def pair_dot(U, a, b):
    return _impl.pair_dot(np.ascontiguousarray(U, dtype=np.float64),
                          np.ascontiguousarray(a, dtype=np.intp),
                          np.ascontiguousarray(b, dtype=np.intp))
