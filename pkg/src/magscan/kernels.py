"""Kernel backend selection.

The compiled extension ``magscan._ckernel`` is used when it imports;
otherwise the numpy implementation in ``magscan._pykernel`` is used.
Setting ``MAGSCAN_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import os

from magscan import _pykernel

OK = _pykernel.OK
RANK_DEFICIENT = _pykernel.RANK_DEFICIENT
SEPARATION = _pykernel.SEPARATION
NO_CONVERGENCE = _pykernel.NO_CONVERGENCE


def _load():
    if os.environ.get("MAGSCAN_PURE_PYTHON", "") not in ("", "0"):
        return _pykernel, "python"
    try:
        from magscan import _ckernel
    except ImportError:
        return _pykernel, "python"
    return _ckernel, "cython"


_impl, BACKEND = _load()
irls_fit = _impl.irls_fit
scan_labels = _impl.scan_labels


def available_backends() -> dict:
    """Map backend name to kernel module for every importable backend."""
    out = {"python": _pykernel}
    try:
        from magscan import _ckernel
    except ImportError:
        pass
    else:
        out["cython"] = _ckernel
    return out
