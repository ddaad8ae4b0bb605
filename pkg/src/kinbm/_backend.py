"""Select the compiled kernels when available, else the numpy fallback.

Set ``KINBM_PURE_PYTHON=1`` to force the fallback (used by the benchmark and
the equivalence tests).
"""
import os

from . import _fallback

fallback = _fallback

if os.environ.get("KINBM_PURE_PYTHON", "") not in ("", "0"):
    compiled = None
else:
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

kernels = compiled if compiled is not None else fallback
COMPILED = compiled is not None
NAME = "cython" if COMPILED else "numpy"
