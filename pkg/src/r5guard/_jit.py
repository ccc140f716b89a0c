"""JIT selection.

Hot loops are written once in the numba-compatible subset of Python. When numba
is importable and ``R5GUARD_DISABLE_JIT`` is unset (or ``0``), they are compiled
with ``numba.njit``; otherwise the same functions run as plain Python over the
numpy state arrays.
"""

from __future__ import annotations

import os

JIT_DISABLED = os.environ.get("R5GUARD_DISABLE_JIT", "").strip() not in ("", "0")

try:
    if JIT_DISABLED:
        raise ImportError
    from numba import njit as _numba_njit
except ImportError:  # pragma: no cover - depends on environment
    _numba_njit = None

JIT_ENABLED = _numba_njit is not None


def njit(func=None, **options):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if func is None:
        return lambda f: njit(f, **options)
    if _numba_njit is None:
        return func
    options.setdefault("cache", True)
    return _numba_njit(**options)(func)


def backend() -> str:
    return "numba" if JIT_ENABLED else "python"
