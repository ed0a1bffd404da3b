"""Kernel backend selection.

The compiled extension is preferred when it importable; otherwise the pure
numpy implementation is used. Both expose the identical kernel API, so the
rest of the package only ever asks for the active module via get().
"""
from __future__ import annotations

from . import numpy_backend

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built; pure python still works
    compiled_backend = None

_BACKENDS = {"numpy": numpy_backend}
if compiled_backend is not None:
    _BACKENDS["compiled"] = compiled_backend

_active = compiled_backend if compiled_backend is not None else numpy_backend


def get():
    """The active kernel module."""
    return _active


def name() -> str:
    return _active.NAME


def available() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def use(backend_name: str):
    """Switch the active backend (mainly for tests and benchmarks).

    Returns the previously active module so callers can restore it.
    """
    global _active
    if backend_name not in _BACKENDS:
        raise ValueError(f"unknown backend {backend_name!r}; available: {available()}")
    previous = _active
    _active = _BACKENDS[backend_name]
    return previous
