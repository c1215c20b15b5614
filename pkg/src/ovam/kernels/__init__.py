"""Numeric kernel selection.

Two interchangeable implementations exist: a compiled Cython extension
(``native``) and a numpy fallback (``python``). The native kernel is chosen
automatically when the extension built; ``OVAM_KERNEL=python|native`` forces
one, and tests can pin a kernel with :func:`using_kernel`.
"""
import logging
import os
from contextlib import contextmanager

from ..errors import ConfigurationError
from . import reference

log = logging.getLogger(__name__)

try:
    from . import _native
except ImportError:
    _native = None

_KERNELS = {"python": reference}
if _native is not None:
    _KERNELS["native"] = _native


def _initial_kernel():
    forced = os.environ.get("OVAM_KERNEL")
    if forced:
        if forced in _KERNELS:
            return forced
        log.warning("OVAM_KERNEL=%r is not available, falling back", forced)
    return "native" if "native" in _KERNELS else "python"


_active = _initial_kernel()


def available_kernels():
    return sorted(_KERNELS)


def kernel_name():
    return _active


def get_kernel():
    """Active kernel module; exposes attention_softmax, attention_grad_keys,
    resize_bilinear and resize_bilinear_adjoint."""
    return _KERNELS[_active]


def set_kernel(name):
    global _active
    if name not in _KERNELS:
        raise ConfigurationError(
            f"unknown kernel {name!r}, available: {available_kernels()}"
        )
    _active = name


@contextmanager
def using_kernel(name):
    previous = _active
    set_kernel(name)
    try:
        yield get_kernel()
    finally:
        set_kernel(previous)
