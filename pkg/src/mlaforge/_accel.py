"""Backend selection for the compiled kernels.

Every hot loop in the package exists twice: a numba ``@njit`` version and a
vectorised numpy version. The numba path is used when numba imports and the
environment variable ``MLAFORGE_NO_NUMBA`` is not set to a truthy value.
"""

from __future__ import annotations

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_TRUTHY = {"1", "true", "yes", "on"}


def numba_disabled() -> bool:
    return os.environ.get("MLAFORGE_NO_NUMBA", "").strip().lower() in _TRUTHY


def use_numba() -> bool:
    """Return True when the compiled kernels should be used."""
    return HAVE_NUMBA and not numba_disabled()


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or a no-op decorator without numba."""
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


if HAVE_NUMBA:
    prange = numba.prange
else:  # pragma: no cover
    prange = range

if HAVE_NUMBA:
    import warnings

    # old system TBB builds make numba warn on every parallel launch
    warnings.filterwarnings("ignore", message=".*TBB threading layer.*")
