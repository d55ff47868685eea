"""Backend selection for the hot kernels.

Numba is used when importable unless ``COMBLAYER_DISABLE_NUMBA`` is set to a
truthy value, in which case every kernel falls back to its pure-numpy twin.
"""
import os

_FLAG = os.environ.get("COMBLAYER_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba
    from numba import njit, prange
    HAS_NUMBA = True
    # tbb builds shipped with some distros are too old and warn on every compile
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not DISABLED

if not HAS_NUMBA:  # pragma: no cover

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

    prange = range


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
