"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when importable; set the environment
variable ``AOMDP_LAB_FORCE_FALLBACK=1`` to force the numpy path. The active
backend name is exposed as ``BACKEND``.
"""

from __future__ import annotations

import os

from . import fallback

__all__ = [
    "BACKEND",
    "WEIGHT_FLOOR",
    "normalize_log_weights",
    "systematic_resample",
    "weighted_moments",
    "gaussian_loglik",
]

WEIGHT_FLOOR = fallback.WEIGHT_FLOOR

_impl = fallback
BACKEND = "fallback"
if os.environ.get("AOMDP_LAB_FORCE_FALLBACK", "0") != "1":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = fallback

normalize_log_weights = _impl.normalize_log_weights
systematic_resample = _impl.systematic_resample
weighted_moments = _impl.weighted_moments
gaussian_loglik = _impl.gaussian_loglik
