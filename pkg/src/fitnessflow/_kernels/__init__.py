"""Time-stepping kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is.  Setting ``FITNESSFLOW_BACKEND=python`` forces the
fallback.
"""
import os

from . import _pykernel

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

BACKENDS = {"python": _pykernel.advance}
if _ckernel is not None:
    BACKENDS["cython"] = _ckernel.advance

_requested = os.environ.get("FITNESSFLOW_BACKEND", "").strip().lower()
if _requested and _requested not in ("python", "cython"):
    raise ImportError(f"FITNESSFLOW_BACKEND must be 'python' or 'cython', got {_requested!r}")
BACKEND = _requested or ("cython" if _ckernel is not None else "python")
if BACKEND not in BACKENDS:
    raise ImportError("FITNESSFLOW_BACKEND=cython but the compiled kernel is not built")


def get_advance(backend=None):
    return BACKENDS[backend or BACKEND]
