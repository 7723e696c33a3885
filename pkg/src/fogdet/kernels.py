"""Backend selection for the hot geometric kernels.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy implementation in ``_kernels_py`` is used. Setting the environment
variable ``FOGDET_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _kernels_py

_compiled = None
if os.environ.get("FOGDET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "cython" if _compiled is not None else "python"

iou_matrix = _impl.iou_matrix
nms = _impl.nms
roi_pool_forward = _impl.roi_pool_forward
greedy_match = _impl.greedy_match


def available_backends():
    """Map backend name to kernel module for every importable backend."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
