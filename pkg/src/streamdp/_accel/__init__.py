"""Hot-kernel backend selection.

The compiled Cython kernels are preferred when the extension built; otherwise
the NumPy reference implementations are used. Set ``STREAMDP_PURE=1`` to force
the pure-Python backend (used by the parity tests and the kernel benchmark).
"""

from __future__ import annotations

import os

import numpy as np

from . import _reference

if os.environ.get("STREAMDP_PURE"):
    _impl = _reference
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _reference
        BACKEND = "python"


def consistency_transform(flat, sizes, b):
    flat = np.ascontiguousarray(flat, dtype=np.float64)
    sizes = np.ascontiguousarray(sizes, dtype=np.int64)
    _impl.consistency_transform(flat, sizes, int(b))
    return flat


def em_iterate(cond, counts, max_iter, tol):
    cond = np.ascontiguousarray(cond, dtype=np.float64)
    counts = np.ascontiguousarray(counts, dtype=np.float64)
    return _impl.em_iterate(cond, counts, int(max_iter), float(tol))


def expanding_median(x):
    return _impl.expanding_median(np.ascontiguousarray(x, dtype=np.float64))


def exponential_filter(x, alpha, seed):
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _impl.exponential_filter(x, float(alpha), float(seed))


def backends():
    """Mapping of available backend names to their kernel modules."""
    table = {"python": _reference}
    try:
        from . import _kernels  # type: ignore[attr-defined]

        table["cython"] = _kernels
    except ImportError:
        pass
    return table
