"""Select the compiled kernels when available, else the NumPy fallback.

Set ``FRACLQT_PURE_PYTHON=1`` to force the fallback (used by the benchmark
and by the backend-equivalence tests).
"""

import os

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if os.environ.get("FRACLQT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"


def compiled_kernels():
    """Return the compiled kernel module, or None if it was not built."""
    try:
        from . import _kernels as mod
    except ImportError:
        return None
    return mod
