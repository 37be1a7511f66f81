# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled cosine-score kernel.

Reads float32 rows and accumulates dot products in float64, matching the
storage/accumulation contract of the datastore without materializing a
float64 copy of the matrix.
"""

import numpy as np


def cosine_scores(const float[:, ::1] matrix, const double[::1] norms,
                  const double[::1] query, double query_norm):
    """Cosine of ``query`` against every row of ``matrix``.

    ``norms`` holds the precomputed Euclidean norm of each row; the caller
    guarantees all norms (including ``query_norm``) are positive.
    """
    cdef Py_ssize_t rows = matrix.shape[0]
    cdef Py_ssize_t dim = matrix.shape[1]
    if norms.shape[0] != rows:
        raise ValueError("norms length does not match row count")
    if query.shape[0] != dim:
        raise ValueError("query dimension does not match matrix")

    out_arr = np.empty(rows, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double acc
    with nogil:
        for i in range(rows):
            acc = 0.0
            for j in range(dim):
                acc += matrix[i, j] * query[j]
            out[i] = acc / (norms[i] * query_norm)
    return out_arr
