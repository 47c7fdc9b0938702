import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from larope.numkernel import as_matrix, grad_check, make_rng, matmul, row_softmax


def naive_matmul(a, b):
    rows, inner = len(a), len(a[0])
    cols = len(b[0])
    out = [[0.0] * cols for _ in range(rows)]
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc += a[i][k] * b[k][j]
            out[i][j] = acc
    return np.array(out)


class TestMatmul:
    def test_identity(self):
        m = make_rng(3).standard_normal((2, 3))
        np.testing.assert_array_equal(matmul(np.eye(2), m), m)

    def test_hand_checked(self):
        np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[5], [6]]), [[17], [39]])

    def test_matches_triple_loop(self):
        rng = make_rng(7)
        a, b = rng.standard_normal((7, 5)), rng.standard_normal((5, 3))
        np.testing.assert_allclose(matmul(a, b), naive_matmul(a.tolist(), b.tolist()), rtol=0, atol=1e-12)

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ValueError, match="mismatch"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_rejects_vectors(self):
        with pytest.raises(ValueError):
            matmul(np.ones(3), np.ones((3, 1)))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**32))
    def test_associative_against_naive(self, p, q, r, s, seed):
        rng = make_rng(seed)
        a, b, c = (rng.uniform(-1, 1, size=sh) for sh in [(p, q), (q, r), (r, s)])
        ours = matmul(matmul(a, b), c)
        ref = naive_matmul(naive_matmul(a.tolist(), b.tolist()).tolist(), c.tolist())
        scale = np.maximum(np.abs(ref), 1.0)
        assert np.max(np.abs(ours - ref) / scale) < 1e-10


class TestRowSoftmax:
    @pytest.mark.parametrize("n", [1, 2, 5, 17])
    def test_constant_row_is_uniform(self, n):
        np.testing.assert_allclose(row_softmax(np.full((1, n), 3.7)), np.full((1, n), 1 / n), atol=1e-15)

    def test_two_class(self):
        np.testing.assert_allclose(row_softmax([[0.0, math.log(3.0)]], 1.0), [[0.25, 0.75]], atol=1e-15)

    def test_matches_direct_formula(self):
        m = make_rng(11).standard_normal((4, 6))
        e = np.exp(m * 0.5)
        np.testing.assert_allclose(row_softmax(m, 0.5), e / e.sum(axis=1, keepdims=True), rtol=0, atol=1e-12)

    def test_scale_applied_before_normalisation(self):
        m = np.array([[1.0, 2.0]])
        np.testing.assert_allclose(row_softmax(m, 2.0), row_softmax(2.0 * m, 1.0), atol=0)

    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 30)),
                  elements=st.floats(-1e4, 1e4)))
    def test_rows_sum_to_one(self, m):
        out = row_softmax(m, 1.0)
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=0, atol=1e-12)


class TestRng:
    def test_same_seed_same_stream(self):
        np.testing.assert_array_equal(make_rng(42).random(100), make_rng(42).random(100))

    def test_different_seeds_differ(self):
        assert not np.array_equal(make_rng(1).random(10), make_rng(2).random(10))

    def test_stream_is_identical_across_processes(self):
        code = "from larope.numkernel import make_rng; print(make_rng(42).bytes(64).hex())"
        runs = [subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
                for _ in range(2)]
        assert runs[0] == runs[1] == make_rng(42).bytes(64).hex() + "\n"

    def test_rejects_out_of_range_seed(self):
        with pytest.raises(ValueError):
            make_rng(-1)


class TestGradCheck:
    def test_linear(self):
        x = make_rng(0).standard_normal((3, 4))
        assert grad_check(lambda v: float(v.sum()), x, np.ones_like(x), 1e-5) < 1e-10

    def test_quadratic(self):
        x = make_rng(1).standard_normal((3, 4))
        assert grad_check(lambda v: 0.5 * float(np.sum(v * v)), x, x.copy(), 1e-5) < 1e-6

    def test_detects_wrong_gradient(self):
        x = make_rng(2).standard_normal((2, 2))
        assert grad_check(lambda v: 0.5 * float(np.sum(v * v)), x, 2 * x, 1e-5) > 0.4

    def test_restores_input(self):
        x = make_rng(3).standard_normal((2, 3))
        before = x.copy()
        grad_check(lambda v: float(np.sum(v**3)), x, 3 * x**2)
        np.testing.assert_array_equal(x, before)

    def test_non_finite_evaluation_raises(self):
        x = np.zeros((1, 2))
        with pytest.raises(FloatingPointError):
            grad_check(lambda v: float("nan"), x, np.zeros_like(x))

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            grad_check(lambda v: 0.0, np.zeros((2, 2)), np.zeros((4,)))


def test_as_matrix_promotes_vectors():
    assert as_matrix([1, 2, 3]).shape == (1, 3)
    with pytest.raises(ValueError):
        as_matrix(np.zeros((2, 2, 2)))
