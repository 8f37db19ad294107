"""Hot kernels with a compiled core and a numpy fallback.

The compiled module is used when it imports; set ``SDEPCA_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation.
"""

import os

from . import _pykernels as python

compiled = None
if not os.environ.get("SDEPCA_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

active = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

counter_uint64 = active.counter_uint64
ndtri = active.ndtri
normals = active.normals
em_linear = active.em_linear
moment_sums = active.moment_sums

__all__ = ["BACKEND", "active", "compiled", "python", "counter_uint64", "ndtri", "normals",
           "em_linear", "moment_sums"]
