"""Hot-kernel backend selection.

Two interchangeable backends implement the numeric kernels the tensor
primitives lean on: the numpy reference (always available) and the compiled
extension built from ``_hot.pyx``. The compiled backend is preferred when it
imported cleanly; set ``MVDIFF_KERNELS=numpy`` or ``MVDIFF_KERNELS=compiled``
to force one, or call :func:`use` at runtime (the benchmark does).
"""

import os

from . import reference

_BACKENDS = {"numpy": reference}

try:
    from . import _hot  # type: ignore[attr-defined]

    _BACKENDS["compiled"] = _hot
except ImportError:
    _hot = None


def _initial():
    forced = os.environ.get("MVDIFF_KERNELS", "auto")
    if forced == "auto":
        return _BACKENDS.get("compiled", reference)
    if forced not in _BACKENDS:
        raise RuntimeError(
            f"MVDIFF_KERNELS={forced!r} requested but only {sorted(_BACKENDS)} are available"
        )
    return _BACKENDS[forced]


_active = _initial()


def active():
    """The currently selected backend module."""
    return _active


def active_name() -> str:
    return _active.NAME


def available() -> list[str]:
    return sorted(_BACKENDS)


def use(name: str):
    """Switch backends at runtime; returns the previously active one."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {sorted(_BACKENDS)}")
    previous = _active
    _active = _BACKENDS[name]
    return previous
