"""Selects the bound-propagation kernel at import time.

The compiled extension is preferred; set ``OCCVER_PURE_PYTHON=1`` to force the
numpy implementation.
"""
import os

from . import _reference

if os.environ.get("OCCVER_PURE_PYTHON"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

if _compiled is not None:
    symbolic_pass = _compiled.symbolic_pass
    BACKEND = "compiled"
else:
    symbolic_pass = _reference.symbolic_pass
    BACKEND = "numpy"

KERNELS = {"numpy": _reference.symbolic_pass}
if _compiled is not None:
    KERNELS["compiled"] = _compiled.symbolic_pass
