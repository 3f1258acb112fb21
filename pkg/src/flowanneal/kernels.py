"""Selects the ODE likelihood kernel backend at import time.

The compiled extension is preferred; the pure-Python implementation is a
drop-in replacement used when the extension is missing or when the
environment variable ``FLOWANNEAL_PURE_PYTHON`` is set (useful for
benchmarking the two backends against each other).
"""

import os

from ._ode_fallback import (STATUS_MAX_STEPS, STATUS_NONFINITE, STATUS_OK,
                            STATUS_STEP_UNDERFLOW)

if os.environ.get("FLOWANNEAL_PURE_PYTHON"):
    from . import _ode_fallback as _impl
    BACKEND = "python"
else:
    try:
        from . import _ode_core as _impl
        BACKEND = "cython"
    except ImportError:
        from . import _ode_fallback as _impl
        BACKEND = "python"

repressilator_trajectory = _impl.repressilator_trajectory

__all__ = [
    "BACKEND",
    "repressilator_trajectory",
    "STATUS_OK",
    "STATUS_STEP_UNDERFLOW",
    "STATUS_MAX_STEPS",
    "STATUS_NONFINITE",
]
