"""numba switch.

Set ``RESLAT_DISABLE_NUMBA=1`` to run every kernel as plain Python over
numpy arrays. Both paths consume the same random stream and produce
identical results; the fallback is only practical for small lattices.
"""

import os

_OFF = {"1", "true", "yes", "on"}

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("RESLAT_DISABLE_NUMBA", "").lower() not in _OFF


def njit(*args, **kwargs):
    if USE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrapper(f):
        return f

    return wrapper


def python_version(f):
    """The uncompiled function behind a kernel (itself when numba is off)."""
    return getattr(f, "py_func", f)
