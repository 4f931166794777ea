"""Hot kernels, compiled when available.

The Cython extension ``_ckernels`` is used if it was built; otherwise the
numpy fallback in ``_pykernels`` is used. Set ``GREEDYPIXEL_PURE_PYTHON=1``
to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("GREEDYPIXEL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

conv3x3_forward = _impl.conv3x3_forward
conv3x3_input_grad = _impl.conv3x3_input_grad
coupon_collector_counts = _impl.coupon_collector_counts
