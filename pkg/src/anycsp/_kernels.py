"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise the
numpy fallback. Setting ``ANYCSP_PURE=1`` forces the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("ANYCSP_PURE"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _fallback

segment_sum = _impl.segment_sum
segment_max = _impl.segment_max
scatter_add_rows = _impl.scatter_add_rows
extension_labels = _impl.extension_labels
walksat_run = _impl.walksat_run
layernorm_forward = _impl.layernorm_forward
layernorm_backward = _impl.layernorm_backward


def backends():
    """Map of available backend name to kernel module."""
    out = {"python": _fallback}
    try:
        from . import _core

        out["compiled"] = _core
    except ImportError:  # pragma: no cover
        pass
    return out
