"""Selects the compiled cost kernel when importable, else the numpy fallback.

Set ``MFTUNE_BACKEND=python`` to force the fallback.
"""

import os

from . import _cost_py

_forced = os.environ.get("MFTUNE_BACKEND", "").strip().lower()

if _forced == "python":
    quadratic_costs = _cost_py.quadratic_costs
    BACKEND = "python"
else:
    try:
        from ._cost import quadratic_costs  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        quadratic_costs = _cost_py.quadratic_costs
        BACKEND = "python"

__all__ = ["BACKEND", "quadratic_costs"]
