"""Hot kernels: compiled extension when built, numpy fallback otherwise.

Set ``LIGHTPATH_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
best_split = _pykernels.best_split
kendall_counts = _pykernels.kendall_counts

if os.environ.get("LIGHTPATH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        best_split = _ckernels.best_split
        kendall_counts = _ckernels.kendall_counts

__all__ = ["BACKEND", "best_split", "kendall_counts"]
