"""Raster kernels with a compiled fast path.

The Cython extension ``hieronst._ckernels`` is used when it was built; the
numpy versions in ``hieronst._fallback`` are used otherwise. Set the
environment variable ``HIERONST_PURE_PYTHON=1`` to force the fallback.
"""

import logging
import os

from hieronst import _fallback

log = logging.getLogger(__name__)

_impl = _fallback
BACKEND = "python"

if os.environ.get("HIERONST_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from hieronst import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        log.debug("compiled kernels unavailable, using numpy fallback")

resize_bilinear = _impl.resize_bilinear
warp_affine = _impl.warp_affine
confusion_counts = _impl.confusion_counts

__all__ = ["BACKEND", "resize_bilinear", "warp_affine", "confusion_counts"]
