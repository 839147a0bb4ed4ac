"""Selects between the numba-compiled kernels and their pure-numpy twins.

Set ``KINMFG_DISABLE_NUMBA=1`` to force the numpy path (useful for debugging
and for platforms without an LLVM toolchain).  ``KINMFG_THREADS`` caps the
numba thread pool.
"""
from __future__ import annotations

import os

DISABLE_FLAG = "KINMFG_DISABLE_NUMBA"
THREADS_FLAG = "KINMFG_THREADS"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _flag_set(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and not _flag_set(DISABLE_FLAG)


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it untouched."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def apply_thread_limit() -> None:
    value = os.environ.get(THREADS_FLAG)
    if value and HAVE_NUMBA:
        numba.set_num_threads(max(1, min(int(value), numba.config.NUMBA_NUM_THREADS)))


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
