"""Detector matching kernels.

The compiled ``_cmatch`` extension is used when it was built; otherwise the
pure-Python ``_pymatch`` module is loaded. Set ``SANASIM_PURE=1`` to force
the fallback. ``BACKEND`` names the active implementation.
"""

import os

from . import _pymatch as pure

if os.environ.get("SANASIM_PURE"):
    _impl = pure
else:
    try:
        from . import _cmatch as _impl
    except ImportError:  # extension not built
        _impl = pure

BACKEND = "pure" if _impl is pure else "compiled"

match = _impl.match
hamming = _impl.hamming
first_match = _impl.first_match
survivors = _impl.survivors
hits = _impl.hits

__all__ = ["BACKEND", "match", "hamming", "first_match", "survivors", "hits", "pure"]
