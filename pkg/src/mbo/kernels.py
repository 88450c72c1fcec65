"""Kernel backend selected at import.

The compiled extension ``mbo._core`` is used when it was built; otherwise,
or when ``MBO_PURE_PYTHON=1`` is set, the numpy versions in
``mbo._kernels_py`` are used.  ``BACKEND`` names the active one.
"""
from __future__ import annotations

import os

from . import _kernels_py

_py = _kernels_py
_compiled = None
if os.environ.get("MBO_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _compiled
    except ImportError:  # extension not built
        _compiled = None

_impl = _compiled if _compiled is not None else _py
BACKEND = "compiled" if _compiled is not None else "python"

tension_threshold = _impl.tension_threshold
step_sums = _impl.step_sums
energy_sum = _impl.energy_sum
halfspace_scan = _impl.halfspace_scan


def backends() -> dict:
    """Every available backend by name, for benchmarks and cross-checks."""
    out = {"python": _py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
