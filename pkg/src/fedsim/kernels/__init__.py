"""Hot-loop kernels for the per-client local solves.

A compiled Cython implementation is preferred; a pure-numpy fallback with the
same semantics (agreement up to floating-point summation order) is selected at
import time when the extension is missing or ``FEDSIM_FORCE_PYTHON=1`` is set.
"""

import os

from . import _ref

if os.environ.get("FEDSIM_FORCE_PYTHON") == "1":
    _impl = _ref
    HAVE_COMPILED = False
else:
    try:
        from . import _core as _impl

        HAVE_COMPILED = True
    except ImportError:
        _impl = _ref
        HAVE_COMPILED = False

solve_logistic_local = _impl.solve_logistic_local
solve_logistic_cohort = _impl.solve_logistic_cohort
backend_name = "compiled" if HAVE_COMPILED else "python"

__all__ = [
    "solve_logistic_local",
    "solve_logistic_cohort",
    "HAVE_COMPILED",
    "backend_name",
    "_ref",
]
