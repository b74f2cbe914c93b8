"""Backend selection for the numeric kernels.

Set ``BRANCHWALK_DISABLE_NUMBA=1`` before import to force the numpy / pure
Python fallbacks. Both backends are importable at any time through
:mod:`branchwalk.kernels`; the flag only changes what the dispatchers pick.
"""
import os

_FLAG = os.environ.get("BRANCHWALK_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG not in ("", "0", "false", "no")

try:
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise.

    Compilation is lazy, so decorating costs nothing when the fallback path
    is selected.
    """
    if HAVE_NUMBA:
        return _numba_njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrapper(f):
        return f

    return wrapper
