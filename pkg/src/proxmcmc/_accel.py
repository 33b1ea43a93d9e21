"""Backend selection for the compiled kernels.

Set ``PROXMCMC_DISABLE_NUMBA=1`` before import to force the pure-numpy path.
The backend can also be switched at runtime with :func:`set_backend`, which
is what the benchmark and the backend-equivalence tests do.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("PROXMCMC_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

HAVE_NUMBA = numba is not None
_backend = "numba" if (HAVE_NUMBA and not _DISABLED) else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise.

    Compilation is lazy, so decorating is free even when the numpy backend
    is active.
    """
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def get_backend():
    return _backend


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` for subsequent kernel calls."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name
