"""Pure-Python (numpy) cosine-score kernel.

Fallback for :mod:`skycap._scan`. Rows are promoted to float64 in blocks so
dot products accumulate at full precision without copying the whole matrix.
"""

from __future__ import annotations

import numpy as np

_BLOCK_ROWS = 16384


def cosine_scores(
    matrix: np.ndarray,
    norms: np.ndarray,
    query: np.ndarray,
    query_norm: float,
) -> np.ndarray:
    """Cosine of ``query`` against every row of ``matrix``.

    Same contract as the compiled kernel: float32 rows, float64 accumulation,
    all norms positive.
    """
    rows = matrix.shape[0]
    if norms.shape[0] != rows:
        raise ValueError("norms length does not match row count")
    if query.shape[0] != matrix.shape[1]:
        raise ValueError("query dimension does not match matrix")

    out = np.empty(rows, dtype=np.float64)
    for start in range(0, rows, _BLOCK_ROWS):
        block = matrix[start : start + _BLOCK_ROWS]
        out[start : start + block.shape[0]] = block.astype(np.float64) @ query
    out /= norms * query_norm
    return out
