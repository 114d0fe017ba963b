"""Numba switch.

Kernels in :mod:`dgpo.kernels` exist twice: a numba ``@njit`` version and a
plain numpy version. Which one is bound to the public names is decided once,
at import time, from ``DGPO_NUMBA`` (``0``/``false``/``off`` disables numba).
"""

from __future__ import annotations

import os

try:
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    HAS_NUMBA = False
    _njit = None

_FLAG = os.environ.get("DGPO_NUMBA", "1").strip().lower()
USE_NUMBA = HAS_NUMBA and _FLAG not in {"0", "false", "off", "no"}


def njit(fn):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise."""
    if not HAS_NUMBA:
        return fn
    return _njit(cache=True)(fn)
