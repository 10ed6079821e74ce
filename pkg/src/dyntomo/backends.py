"""Kernel backend selection.

The ray-tracing inner loops exist twice: a numba @njit implementation and a
vectorized pure-numpy fallback computing the same discretization. The active
backend is chosen once at import time from the DYNTOMO_BACKEND environment
variable ("numba" or "numpy"); default is numba when importable, else numpy.
"""

import os

from .errors import ConfigError

_VALID = ("numba", "numpy")


def _resolve() -> str:
    want = os.environ.get("DYNTOMO_BACKEND", "").strip().lower()
    if want and want not in _VALID:
        raise ConfigError(
            f"DYNTOMO_BACKEND must be one of {_VALID}, got {want!r}"
        )
    if want == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        if want == "numba":
            raise ConfigError("DYNTOMO_BACKEND=numba but numba is not importable")
        return "numpy"


BACKEND = _resolve()

if BACKEND == "numba":
    from . import _kernels_numba as kernels
else:
    from . import _kernels_numpy as kernels


def get_kernels(name: "str | None" = None):
    """Return the kernel module; pass an explicit name to bypass the env flag."""
    if name is None:
        return kernels
    if name == "numba":
        from . import _kernels_numba
        return _kernels_numba
    if name == "numpy":
        from . import _kernels_numpy
        return _kernels_numpy
    raise ConfigError(f"unknown backend {name!r}")
