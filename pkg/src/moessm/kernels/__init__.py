"""Scan kernel backends and backend selection.

Two interchangeable backends implement the same six kernels (dense /
diagonal / scalar transition, each with and without trajectory recording):

    backend_numba   numba @njit compiled loops (default when importable)
    backend_numpy   pure-numpy fallback

The default is chosen once at import time from the MOESSM_BACKEND environment
variable ("numba" or "numpy"; unset means numba when available, else numpy)
and can be changed at runtime with use_backend(). Consumers fetch the module
via get_backend() at call time, so switching affects subsequent calls.
"""

from __future__ import annotations

import os

from ..errors import InvalidInputError
from . import backend_numpy

_BACKENDS = {"numpy": backend_numpy}
_numba_import_error: Exception | None = None

KERNEL_NAMES = (
    "scan_dense_last",
    "scan_dense_traj",
    "scan_diag_last",
    "scan_diag_traj",
    "scan_scalar_last",
    "scan_scalar_traj",
)


def _load_numba_backend() -> bool:
    """Import the numba backend lazily; remember a failure and don't retry."""
    global _numba_import_error
    if "numba" in _BACKENDS:
        return True
    if _numba_import_error is not None:
        return False
    try:
        from . import backend_numba
    except ImportError as exc:
        _numba_import_error = exc
        return False
    _BACKENDS["numba"] = backend_numba
    return True


def _initial_backend() -> str:
    env = os.environ.get("MOESSM_BACKEND", "").strip().lower()
    if env:
        if env == "numba" and not _load_numba_backend():
            raise InvalidInputError(
                f"MOESSM_BACKEND=numba but the numba backend failed to import: "
                f"{_numba_import_error}"
            )
        if env not in ("numba", "numpy"):
            raise InvalidInputError(
                f"MOESSM_BACKEND={env!r} not recognized; use 'numba' or 'numpy'"
            )
        return env
    return "numba" if _load_numba_backend() else "numpy"


_active_name = _initial_backend()


def active_backend() -> str:
    """Name of the backend get_backend() returns by default."""
    return _active_name


def available_backends() -> tuple[str, ...]:
    """Names of importable backends, numpy always included."""
    _load_numba_backend()
    return tuple(sorted(_BACKENDS))


def use_backend(name: str) -> None:
    """Switch the active backend for subsequent kernel lookups."""
    global _active_name
    if name == "numba":
        _load_numba_backend()
    if name not in _BACKENDS:
        raise InvalidInputError(
            f"kernel backend {name!r} unavailable; choices: {available_backends()}"
        )
    _active_name = name


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        name = _active_name
    if name == "numba":
        _load_numba_backend()
    if name not in _BACKENDS:
        raise InvalidInputError(
            f"kernel backend {name!r} unavailable; choices: {available_backends()}"
        )
    return _BACKENDS[name]
