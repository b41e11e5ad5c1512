"""Kernel backend selection.

The compiled extension is preferred when present; the numpy reference
implementation is the fallback.  Override with EGOEXO_KERNELS=compiled
(fail if the extension is missing) or EGOEXO_KERNELS=python.
"""

import os

from . import _ref

T_MIN = _ref.T_MIN
HIT_NONE = _ref.HIT_NONE
HIT_GROUND = _ref.HIT_GROUND

_choice = os.environ.get("EGOEXO_KERNELS", "auto")
if _choice not in ("auto", "compiled", "python"):
    raise RuntimeError(
        f"EGOEXO_KERNELS must be one of auto/compiled/python, got {_choice!r}"
    )

_impl = None
if _choice in ("auto", "compiled"):
    try:
        from . import _fast as _impl
    except ImportError:
        if _choice == "compiled":
            raise RuntimeError(
                "EGOEXO_KERNELS=compiled but the extension is not built"
            ) from None
if _impl is None:
    _impl = _ref

BACKEND = "compiled" if _impl is not _ref else "python"

cast_rays = _impl.cast_rays
zbuffer_splat = _impl.zbuffer_splat

__all__ = [
    "BACKEND",
    "HIT_GROUND",
    "HIT_NONE",
    "T_MIN",
    "cast_rays",
    "zbuffer_splat",
]
