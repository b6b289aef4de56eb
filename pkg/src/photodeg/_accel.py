"""Optional numba acceleration.

Set ``PHOTODEG_DISABLE_NUMBA=1`` before import to force the pure-numpy
kernels even when numba is installed.
"""
import os

_DISABLED = os.environ.get("PHOTODEG_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    import numba
    from numba import njit, prange

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # avoid probing an outdated TBB on import
        numba.config.THREADING_LAYER = "workqueue"

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag in CI
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap

    prange = range


def default_backend():
    return "numba" if HAVE_NUMBA else "numpy"


def resolve_backend(backend=None):
    """Map ``None``/"auto" to the best available backend and validate names."""
    if backend in (None, "auto"):
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable or disabled")
    return backend
