"""The compiled and pure-Python scan kernels must be interchangeable."""

import numpy as np
import pytest

from skycap import scan
from skycap._scan_py import cosine_scores as scores_py

compiled_missing = scan.cosine_scores_compiled is None


def _inputs(rng, rows, dim):
    matrix = rng.standard_normal((rows, dim)).astype(np.float32)
    norms = np.sqrt(
        np.einsum("ij,ij->i", matrix.astype(np.float64), matrix.astype(np.float64))
    )
    query = rng.standard_normal(dim)
    return matrix, norms, query, float(np.linalg.norm(query))


@pytest.mark.skipif(compiled_missing, reason="compiled extension not built")
def test_kernels_agree():
    rng = np.random.default_rng(7)
    for rows, dim in [(1, 1), (3, 4), (100, 17), (5000, 32)]:
        matrix, norms, query, qnorm = _inputs(rng, rows, dim)
        a = scan.cosine_scores_compiled(matrix, norms, query, qnorm)
        b = scores_py(matrix, norms, query, qnorm)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_python_kernel_matches_direct_cosine():
    rng = np.random.default_rng(8)
    matrix, norms, query, qnorm = _inputs(rng, 50, 9)
    out = scores_py(matrix, norms, query, qnorm)
    for i in range(50):
        row = matrix[i].astype(np.float64)
        expected = float(row @ query) / (np.linalg.norm(row) * qnorm)
        assert out[i] == pytest.approx(expected, abs=1e-14)


def test_scores_bounded():
    rng = np.random.default_rng(9)
    matrix, norms, query, qnorm = _inputs(rng, 2000, 8)
    out = scan.cosine_scores(matrix, norms, query, qnorm)
    assert np.all(np.abs(out) <= 1.0 + 1e-6)


def test_shape_validation():
    matrix = np.zeros((3, 2), dtype=np.float32)
    with pytest.raises(ValueError):
        scores_py(matrix, np.ones(2), np.ones(2), 1.0)
    with pytest.raises(ValueError):
        scores_py(matrix, np.ones(3), np.ones(5), 1.0)
    if not compiled_missing:
        with pytest.raises(ValueError):
            scan.cosine_scores_compiled(matrix, np.ones(2), np.ones(2), 1.0)


def test_blocked_accumulation_covers_multiple_blocks(monkeypatch):
    import skycap._scan_py as mod

    monkeypatch.setattr(mod, "_BLOCK_ROWS", 7)
    rng = np.random.default_rng(10)
    matrix, norms, query, qnorm = _inputs(rng, 30, 5)
    blocked = mod.cosine_scores(matrix, norms, query, qnorm)
    expected = (matrix.astype(np.float64) @ query) / (norms * qnorm)
    np.testing.assert_allclose(blocked, expected, rtol=0, atol=1e-15)
