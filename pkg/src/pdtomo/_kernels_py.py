"""Pure-numpy fallbacks for the margin-scan kernels.

Same contracts as the compiled ``_margin_kernels`` extension; selected at
import time by ``pdtomo.kernels`` when the extension is unavailable (or
disabled via PDTOMO_PURE=1).
"""

from __future__ import annotations

import numpy as np

_CHUNK = 512  # nodes per broadcast block, keeps the (chunk, J, M) temporary small


def margin_scan(unit_fields, directions):
    """min over sample directions of max_j |q_j| at one point.

    unit_fields : (J, dim) unit vectors
    directions  : (M, dim) unit vectors
    Returns (margin, argmin_direction_index).
    """
    dots = unit_fields @ directions.T  # (J, M)
    q = 2.0 * dots * dots - 1.0
    worst = np.max(np.abs(q), axis=0)  # (M,)
    i = int(np.argmin(worst))
    return float(worst[i]), i


def field_margin_scan(unit_fields, directions):
    """Per-node margin scan.

    unit_fields : (N, J, dim), unit vectors per node and functional
    directions  : (M, dim) unit sample directions
    Returns (margins (N,), argmin indices (N,)).
    """
    n = unit_fields.shape[0]
    margins = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        dots = np.einsum("njd,md->njm", unit_fields[start:stop], directions)
        q = np.abs(2.0 * dots * dots - 1.0)
        worst = q.max(axis=1)  # (chunk, M)
        local = worst.argmin(axis=1)
        margins[start:stop] = np.take_along_axis(worst, local[:, None], axis=1)[:, 0]
        idx[start:stop] = local
    return margins, idx
