"""Hot kernels, compiled when available.

The Cython extension is used if it imports; otherwise the NumPy versions
take over. Set ``CARDIORESP_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("CARDIORESP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        pass
    else:
        _impl = _ckernels
        BACKEND = "cython"

best_split = _impl.best_split
apply_tree = _impl.apply_tree
trailing_median = _impl.trailing_median

__all__ = ["BACKEND", "best_split", "apply_tree", "trailing_median"]
