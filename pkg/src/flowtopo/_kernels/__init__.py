"""Kernel backend selection.

The compiled Cython kernels are used when importable; the pure-numpy
implementation is the fallback. Override with FLOWTOPO_KERNELS=python|cython
(cython raises if the extension is missing); the default is auto.
"""

import os

from . import _numpy_impl

_choice = os.environ.get("FLOWTOPO_KERNELS", "auto").lower()

if _choice not in ("auto", "python", "cython"):
    raise ImportError(f"FLOWTOPO_KERNELS must be auto, python or cython, got {_choice!r}")

if _choice == "python":
    _impl = _numpy_impl
    BACKEND = "python"
else:
    try:
        from . import _speedups as _impl

        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        _impl = _numpy_impl
        BACKEND = "python"

affine_forward = _impl.affine_forward
affine_inverse = _impl.affine_inverse
affine_partials = _impl.affine_partials
rqs_forward = _impl.rqs_forward
rqs_inverse = _impl.rqs_inverse
rqs_forward_partials = _impl.rqs_forward_partials
rqs_inverse_partials = _impl.rqs_inverse_partials

MIN_BIN = _numpy_impl.MIN_BIN


def get_backend(name: str):
    """Return the named backend module (for tests and benchmarks)."""
    if name == "python":
        return _numpy_impl
    if name == "cython":
        from . import _speedups

        return _speedups
    raise ValueError(f"unknown kernel backend {name!r}")
