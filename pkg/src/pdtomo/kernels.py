"""Kernel selection: compiled extension when built, numpy fallback otherwise.

Set PDTOMO_PURE=1 to force the fallback (used by the parity tests and the
benchmark in benchmarks/bench_kernels.py).
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

if os.environ.get("PDTOMO_PURE", "0") == "1":
    _impl = _kernels_py
    HAVE_COMPILED = False
else:
    try:
        from . import _margin_kernels as _impl  # type: ignore[attr-defined]

        HAVE_COMPILED = True
    except ImportError:
        _impl = _kernels_py
        HAVE_COMPILED = False


def margin_scan(unit_fields, directions):
    unit_fields = np.ascontiguousarray(unit_fields, dtype=np.float64)
    directions = np.ascontiguousarray(directions, dtype=np.float64)
    return _impl.margin_scan(unit_fields, directions)


def field_margin_scan(unit_fields, directions):
    unit_fields = np.ascontiguousarray(unit_fields, dtype=np.float64)
    directions = np.ascontiguousarray(directions, dtype=np.float64)
    return _impl.field_margin_scan(unit_fields, directions)
