"""Selects the compiled kernel core when it is importable.

Setting ``CHOQUARDLAB_PURE_PYTHON=1`` forces the NumPy implementation.
"""

from __future__ import annotations

import os

from . import _kernels_py

kernels = _kernels_py
COMPILED = False

if not os.environ.get("CHOQUARDLAB_PURE_PYTHON"):
    try:
        from . import _ckernels as kernels  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:  # extension not built
        pass

NAME = "cython" if COMPILED else "numpy"
