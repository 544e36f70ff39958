"""Kernel backend selection.

The compiled extension is preferred when importable; the pure-numpy
fallback is used otherwise.  CFBANDIT_KERNELS=python|native forces a
backend ("native" raises if the extension is unavailable).
"""

from __future__ import annotations

import os

from . import _pyfallback

_requested = os.environ.get("CFBANDIT_KERNELS", "auto").lower()

if _requested not in ("auto", "native", "python"):
    raise ImportError(f"CFBANDIT_KERNELS must be auto|native|python, got {_requested!r}")

if _requested == "python":
    _impl = _pyfallback
    BACKEND = "python"
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:
        if _requested == "native":
            raise
        _impl = _pyfallback
        BACKEND = "python"

batch_gibbs = _impl.batch_gibbs
segment_argmax = _impl.segment_argmax
chosen_stats = _impl.chosen_stats
direct_stats = _impl.direct_stats

__all__ = ["BACKEND", "batch_gibbs", "segment_argmax", "chosen_stats", "direct_stats"]
