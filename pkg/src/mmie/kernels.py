"""Selects the CRF kernel at import time.

The compiled Cython extension is used when present; otherwise the pure-numpy
twin. Setting the environment variable ``MMIE_PURE_PYTHON=1`` forces the
fallback (useful for the kernel parity tests and the benchmark).
"""

from __future__ import annotations

import os

if os.environ.get("MMIE_PURE_PYTHON"):
    from mmie import _crf_np as crf_kernel
    COMPILED = False
else:
    try:
        from mmie import _crf_cy as crf_kernel  # type: ignore[no-redef]
        COMPILED = True
    except ImportError:
        from mmie import _crf_np as crf_kernel  # type: ignore[no-redef]
        COMPILED = False


def kernel_name() -> str:
    return "compiled" if COMPILED else "numpy"
