"""Sweep kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable GLFIELD_BACKEND=python is set, the NumPy fallback runs.
"""
from __future__ import annotations

import os

from . import _pysweep

BACKEND = "python"
_compiled = None
if os.environ.get("GLFIELD_BACKEND", "").lower() != "python":
    try:
        from . import _sweep as _compiled
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _compiled = None


def get_kernel(name: str | None = None):
    """Return the run_sweeps implementation for a backend name (default: active)."""
    name = name or BACKEND
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled sweep core is not available")
        return _compiled.run_sweeps
    if name == "python":
        return _pysweep.run_sweeps
    raise ValueError(f"unknown backend {name!r}")


def compiled_available() -> bool:
    return _compiled is not None


def get_force(name: str | None = None):
    """Return (edge_force, edge_energy) for a backend name (default: active)."""
    name = name or BACKEND
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled core is not available")
        return _compiled.edge_force, _compiled.edge_energy
    if name == "python":
        return _pysweep.edge_force, _pysweep.edge_energy
    raise ValueError(f"unknown backend {name!r}")


def get_gather(name: str | None = None):
    """Return the weighted-gather kernel used for many-centre averages."""
    name = name or BACKEND
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled core is not available")
        return _compiled.gather_weighted
    if name == "python":
        return _pysweep.gather_weighted
    raise ValueError(f"unknown backend {name!r}")
