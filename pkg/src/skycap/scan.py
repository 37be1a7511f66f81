"""Cosine-scan kernel selection.

The hot loop of retrieval is scoring a query against every stored row.
Two interchangeable kernels exist: a Cython extension and a numpy fallback.
The extension is preferred when importable; set ``SKYCAP_PURE_PYTHON=1`` to
force the fallback. Both are importable directly for benchmarking.
"""

from __future__ import annotations

import os

from ._scan_py import cosine_scores as cosine_scores_py

try:
    from ._scan import cosine_scores as cosine_scores_compiled
except ImportError:
    cosine_scores_compiled = None

if cosine_scores_compiled is not None and not os.environ.get("SKYCAP_PURE_PYTHON"):
    cosine_scores = cosine_scores_compiled
    SCAN_BACKEND = "compiled"
else:
    cosine_scores = cosine_scores_py
    SCAN_BACKEND = "python"
