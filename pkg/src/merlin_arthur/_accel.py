"""Numba switch for the hot kernels.

Every kernel in :mod:`merlin_arthur.kernels` exists twice: a loop version that
numba compiles and a vectorised numpy version. ``MERLIN_ARTHUR_NUMBA=0`` in the
environment (or a missing numba install) selects the numpy path at import time.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FLAG = os.environ.get("MERLIN_ARTHUR_NUMBA", "1").strip().lower()

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")


def jit(fn):
    """Compile ``fn`` with ``numba.njit(cache=True)`` when numba is importable.

    The plain Python function is returned otherwise, so the loop kernels stay
    callable (slowly) for cross-checks on machines without numba.
    """
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True)(fn)
