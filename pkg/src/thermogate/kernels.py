"""Kernel selection: compiled extension when importable, numpy otherwise.

Set THERMOGATE_KERNELS=python to force the fallback.
"""
from __future__ import annotations

import os

from . import _sg_py

try:
    from . import _sg_ext
except ImportError:  # extension not built
    _sg_ext = None

AVAILABLE = {"python": _sg_py}
if _sg_ext is not None:
    AVAILABLE["cython"] = _sg_ext


def default_backend() -> str:
    forced = os.environ.get("THERMOGATE_KERNELS", "").strip().lower()
    if forced in AVAILABLE:
        return forced
    return "cython" if "cython" in AVAILABLE else "python"


def get(name: str | None = None):
    name = name or default_backend()
    if name not in AVAILABLE:
        raise ValueError(f"kernel backend {name!r} not available (have {sorted(AVAILABLE)})")
    return AVAILABLE[name]
