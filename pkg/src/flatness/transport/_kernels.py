"""Kernel selection between the compiled simplex and the Python fallback."""

import warnings

from . import _simplex_py

try:
    from . import _simplex as _compiled
    COMPILED_AVAILABLE = True
except ImportError as exc:  # pragma: no cover - depends on the build
    warnings.warn(
        f"flatness: compiled transport kernel unavailable ({exc}); using the pure-Python fallback."
    )
    _compiled = None
    COMPILED_AVAILABLE = False

_backend = "compiled" if COMPILED_AVAILABLE else "python"


def set_backend(name: str) -> None:
    """Choose ``"compiled"`` or ``"python"`` for subsequent solves."""
    global _backend
    if name not in ("compiled", "python"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "compiled" and not COMPILED_AVAILABLE:
        raise RuntimeError("compiled kernel was not built")
    _backend = name


def get_backend() -> str:
    return _backend


def simplex_module(backend: str | None = None):
    name = backend or _backend
    if name == "compiled":
        if not COMPILED_AVAILABLE:
            raise RuntimeError("compiled kernel was not built")
        return _compiled
    if name == "python":
        return _simplex_py
    raise ValueError(f"unknown backend {name!r}")
