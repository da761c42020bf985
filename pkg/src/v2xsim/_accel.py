"""Numba switch.

Set ``V2XSIM_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import; :func:`set_backend` overrides it at runtime (tests and
the benchmark use that to run both paths in one process).
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

_disabled = os.environ.get("V2XSIM_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes")
_backend = "numba" if HAVE_NUMBA and not _disabled else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` with caching on, or an identity decorator without numba."""
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def backend():
    return _backend


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    prev, _backend = _backend, name
    return prev
