"""Kernel backend selection.

Two interchangeable implementations of the per-client training kernels
exist: a Cython extension (``fedcache._accel._core``, built at install
time when a C toolchain is present) and a vectorized numpy fallback.
``auto`` prefers the compiled one. The choice can be forced with the
``FEDCACHE_BACKEND`` environment variable or the ``backend`` config key;
each backend is individually deterministic.
"""

import os

from . import fallback

_COMPILED = None
_COMPILED_ERR = None
try:
    from . import compiled as _COMPILED  # noqa: F401
except ImportError as exc:  # extension not built
    _COMPILED_ERR = exc

_active = None


def available_backends():
    names = ["numpy"]
    if _COMPILED is not None:
        names.insert(0, "compiled")
    return names


def get_backend(name="auto"):
    if name == "auto":
        return _COMPILED if _COMPILED is not None else fallback
    if name == "numpy":
        return fallback
    if name == "compiled":
        if _COMPILED is None:
            raise RuntimeError(
                f"compiled backend unavailable ({_COMPILED_ERR}); rebuild the extension"
            )
        return _COMPILED
    raise ValueError(f"unknown backend {name!r}; expected auto, compiled or numpy")


def active_backend():
    global _active
    if _active is None:
        _active = get_backend(os.environ.get("FEDCACHE_BACKEND", "auto"))
    return _active


def set_active_backend(name):
    global _active
    _active = get_backend(name)
    return _active
