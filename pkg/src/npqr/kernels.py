"""Back-end selection for the hot kernels.

The compiled extension is used when it imports; otherwise the NumPy fallback.
Set ``NPQR_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from npqr import _pykernels

if os.environ.get("NPQR_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from npqr import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

bspline_design = _impl.bspline_design
score_process = _impl.score_process

__all__ = ["BACKEND", "bspline_design", "score_process"]
