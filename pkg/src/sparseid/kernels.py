"""Kernel backend selection.

The compiled extension is used when importable; otherwise (or when the
``SPARSEID_PURE_PYTHON`` environment variable is non-empty) the numpy
fallback is used. ``BACKEND`` names the active one.
"""
import os

from . import _kernels_py

if os.environ.get("SPARSEID_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

support_mask = _impl.support_mask
score_codebook = _impl.score_codebook
pack_ternary = _impl.pack_ternary
unpack_ternary = _impl.unpack_ternary


def backends():
    """Map of every available backend name to its module."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        out["cython"] = _kernels
    return out
