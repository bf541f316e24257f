"""Kernel backend selection.

The hot solver loops exist twice: a numba @njit implementation and a pure
numpy fallback with the same update arithmetic. The environment variable
``SPARSEHT_BACKEND`` picks one ("numba" or "numpy"); unset, numba is used
when it imports and numpy otherwise. Selection is re-read on every call so
tests can flip the variable at runtime.
"""

from __future__ import annotations

import os

_ENV_VAR = "SPARSEHT_BACKEND"

try:
    import numba  # noqa: F401

    _HAS_NUMBA = True
except ImportError:
    _HAS_NUMBA = False


def backend_name() -> str:
    """Resolve the active backend name from the environment."""
    name = os.environ.get(_ENV_VAR, "").strip().lower()
    if name == "":
        return "numba" if _HAS_NUMBA else "numpy"
    if name not in ("numba", "numpy"):
        raise ValueError(f"{_ENV_VAR} must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not _HAS_NUMBA:
        raise ValueError(f"{_ENV_VAR}=numba requested but numba is not importable")
    return name


def kernels():
    """Return the kernel module for the active backend."""
    if backend_name() == "numba":
        from sparseht import _kernels_numba

        return _kernels_numba
    from sparseht import _kernels_numpy

    return _kernels_numpy
