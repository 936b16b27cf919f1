"""Kernel backend selection.

The Cython extension is preferred; the numpy fallback is used when it is
missing or when the ``ENP_LAB_PURE_PYTHON`` environment variable is set to a
non-empty value other than ``0``.
"""

import os

import numpy as np

from . import _kernels_py

_force_py = os.environ.get("ENP_LAB_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def sgld_linear_head(s0, w, b, step, noise, bound=0.0, impl=None):
    impl = impl or _impl
    return impl.sgld_linear_head(
        np.ascontiguousarray(s0, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
        float(b),
        float(step),
        np.ascontiguousarray(noise, dtype=np.float64),
        float(bound),
    )


def dtw_manhattan(a, b, impl=None):
    impl = impl or _impl
    return float(
        impl.dtw_manhattan(
            np.ascontiguousarray(a, dtype=np.int64).reshape(-1, 2),
            np.ascontiguousarray(b, dtype=np.int64).reshape(-1, 2),
        )
    )


def bfs_distances(free, goal, impl=None):
    impl = impl or _impl
    return impl.bfs_distances(np.ascontiguousarray(free, dtype=np.uint8), int(goal[0]), int(goal[1]))


def python_backend():
    return _kernels_py


def compiled_backend():
    """The compiled module, or None when the extension is unavailable."""
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return None
    return _kernels
