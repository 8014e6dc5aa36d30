"""Kernel selection: compiled extension when importable, numpy otherwise.

Set ``FEDATE_PURE_PYTHON=1`` to force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("FEDATE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

CONTINUING = _kernels_py.CONTINUING
CONVERGED = _kernels_py.CONVERGED
DIVERGED = _kernels_py.DIVERGED

power_iteration = _impl.power_iteration
fedavg_full_batch = _impl.fedavg_full_batch

__all__ = ["BACKEND", "power_iteration", "fedavg_full_batch", "CONTINUING", "CONVERGED", "DIVERGED"]
