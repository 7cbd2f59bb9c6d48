"""Optional numba acceleration.

Set ``LSKSVD_NO_NUMBA=1`` to force the pure-numpy code paths (useful for
debugging and for the benchmark comparison). When numba is not importable the
numpy paths are used automatically.
"""

import os

_disabled = os.environ.get("LSKSVD_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _disabled:
        raise ImportError("numba disabled by LSKSVD_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator


def use_numba(flag=None):
    """Resolve a per-call backend override against the module default."""
    if flag is None:
        return HAVE_NUMBA
    return bool(flag) and HAVE_NUMBA
