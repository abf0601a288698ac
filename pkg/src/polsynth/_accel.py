"""Numba switch.

Set ``POLSYNTH_DISABLE_NUMBA=1`` to route every kernel through its pure-numpy
implementation.  Numba being absent has the same effect.
"""

import os

_disabled = os.environ.get("POLSYNTH_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and not _disabled


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise."""
    if _numba is None:  # pragma: no cover
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    return _numba.njit(*args, **kwargs)
