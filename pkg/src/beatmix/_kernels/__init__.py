"""Kernel backend selection.

The compiled Cython extension is used when importable; otherwise (or when
``BEATMIX_PURE_PYTHON=1`` is set) the NumPy fallback takes over. The active
choice is exposed as ``BACKEND`` so tests and benchmarks can report it.
"""

import os

from . import fallback

if os.environ.get("BEATMIX_PURE_PYTHON", "") not in ("", "0"):
    _impl = fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = fallback
        BACKEND = "python"

beat_dp = _impl.beat_dp
nn_max_dot = _impl.nn_max_dot


def using_compiled() -> bool:
    return BACKEND == "compiled"
