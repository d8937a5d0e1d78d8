"""Kernel backend selection.

The hot inner loops (greedy capacity-constrained assignment, the masked
contrastive core) exist twice: numba @njit kernels and pure-numpy
fallbacks. ``SUBTAIL_BACKEND=numba|numpy`` forces one; the default
(``auto``) prefers numba when it imports. ``benchmarks/bench_backends.py``
compares the two.
"""

from __future__ import annotations

import os

from . import _kernels_numpy

_choice = os.environ.get("SUBTAIL_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(f"SUBTAIL_BACKEND must be 'numba' or 'numpy', got {_choice!r}")

if _choice == "numpy":
    _impl = _kernels_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _kernels_numba as _impl

        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        _impl = _kernels_numpy
        BACKEND = "numpy"

greedy_capacity_assign = _impl.greedy_capacity_assign
supcon_core = _impl.supcon_core


def worker_threads() -> int:
    """Worker-thread cap from SUBTAIL_THREADS (default 1, serial)."""
    raw = os.environ.get("SUBTAIL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
