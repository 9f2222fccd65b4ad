"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import from ``SDDR_KERNELS`` (``numba`` or
``numpy``; default ``numba`` when it imports). Both backends agree to
floating-point rounding; a single backend is bit-deterministic.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _numpy

try:
    from . import _numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    NUMBA_AVAILABLE = False

_NAMES = (
    "dense_forward",
    "dense_backward",
    "cosine_forward",
    "cosine_backward",
    "margin_ranking",
    "herding_select",
    "nearest_mean",
)


def get_backend(name: str) -> ModuleType:
    name = name.lower()
    if name == "numpy":
        return _numpy
    if name == "numba":
        if _numba is None:
            raise RuntimeError("numba backend requested but numba is not importable")
        return _numba
    raise ValueError(f"unknown kernel backend {name!r} (expected 'numba' or 'numpy')")


_requested = os.environ.get("SDDR_KERNELS", "numba" if NUMBA_AVAILABLE else "numpy")
if _requested.lower() == "numba" and not NUMBA_AVAILABLE:
    _requested = "numpy"
BACKEND = _requested.lower()
_active = get_backend(BACKEND)

dense_forward = _active.dense_forward
dense_backward = _active.dense_backward
cosine_forward = _active.cosine_forward
cosine_backward = _active.cosine_backward
margin_ranking = _active.margin_ranking
herding_select = _active.herding_select
nearest_mean = _active.nearest_mean

__all__ = ["BACKEND", "NUMBA_AVAILABLE", "get_backend", *_NAMES]
