"""Hot-kernel dispatch.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy twins in ``_pykernels`` are used. Set ``GLIDERMDO_PURE_PYTHON=1`` to
force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("GLIDERMDO_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

aic_matrix = _impl.aic_matrix
containment_sum = _impl.containment_sum
hvi_batch = _impl.hvi_batch

__all__ = ["BACKEND", "aic_matrix", "containment_sum", "hvi_batch"]
