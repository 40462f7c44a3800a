"""Numeric primitives against independent brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stitchkit.errors import ConfigError, DimensionError, NumericError
from stitchkit.tensor_ops import (
    adaptive_avg_pool_1x1,
    center_columns,
    conv2d,
    matmul,
    resize_spatial,
    solve_projection,
)


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def naive_conv2d(x, w, b, stride, padding):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for hi in range(ho):
                for wi in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc += (
                                    xp[ni, ci, hi * stride + i, wi * stride + j]
                                    * w[oi, ci, i, j]
                                )
                    out[ni, oi, hi, wi] = acc + b[oi]
    return out


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(0)
        b = rng.normal(size=(3, 5))
        assert np.array_equal(matmul(np.eye(3), b), b)

    def test_hand_case(self):
        out = matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]])
        assert np.array_equal(out, [[3.0], [7.0]])

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(7, 5))
        b = rng.normal(size=(5, 3))
        assert np.abs(matmul(a, b) - naive_matmul(a, b)).max() < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_rejects_nonfinite(self):
        with pytest.raises(NumericError):
            matmul(np.array([[np.nan, 1.0]]), np.ones((2, 1)))

    @given(
        m=st.integers(1, 6),
        k=st.integers(1, 6),
        n=st.integers(1, 6),
        p=st.integers(1, 6),
        seed=st.integers(0, 2**16),
    )
    @settings(max_examples=40, deadline=None)
    def test_associativity(self, m, k, n, p, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(m, k))
        b = rng.normal(size=(k, n))
        c = rng.normal(size=(n, p))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        scale = max(1.0, np.abs(left).max())
        assert np.abs(left - right).max() / scale < 1e-9

    def test_pure(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 4))
        assert matmul(a, b).tobytes() == matmul(a, b).tobytes()


class TestConv2d:
    def test_identity_1x1_kernel(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 3, 5, 5))
        w = np.eye(3).reshape(3, 3, 1, 1)
        out = conv2d(x, w, np.zeros(3), 1, 0)
        assert np.allclose(out, x, atol=1e-14)

    def test_all_ones_kernel_sums_input(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 1, 3, 3))
        out = conv2d(x, np.ones((1, 1, 3, 3)), np.zeros(1), 1, 0)
        assert out.shape == (1, 1, 1, 1)
        assert abs(out[0, 0, 0, 0] - x.sum()) < 1e-12

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_six_loop_oracle(self, stride, padding):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        got = conv2d(x, w, b, stride, padding)
        want = naive_conv2d(x, w, b, stride, padding)
        assert got.shape == want.shape
        assert np.abs(got - want).max() < 1e-10

    def test_output_shape_formula(self):
        x = np.zeros((1, 2, 9, 7))
        w = np.zeros((5, 2, 3, 3))
        out = conv2d(x, w, np.zeros(5), 2, 1)
        assert out.shape == (1, 5, (9 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1), 1, 0)

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 5, 5)), np.zeros(1), 1, 0)


class TestAdaptiveAvgPool:
    def test_constant_plane(self):
        x = np.full((1, 2, 4, 4), 3.25)
        out = adaptive_avg_pool_1x1(x)
        assert out.shape == (1, 2, 1, 1)
        assert np.all(out == 3.25)

    def test_2x2_plane(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)
        assert adaptive_avg_pool_1x1(x)[0, 0, 0, 0] == 2.5

    def test_matches_mean_oracle(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(3, 4, 5, 7))
        out = adaptive_avg_pool_1x1(x)
        for n in range(3):
            for c in range(4):
                assert abs(out[n, c, 0, 0] - x[n, c].mean()) < 1e-12


class TestResizeSpatial:
    def test_same_size_identity(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(1, 2, 4, 4))
        assert np.array_equal(resize_spatial(x, 4, 4), x)

    def test_downsample_constant(self):
        x = np.full((1, 1, 4, 4), 1.5)
        out = resize_spatial(x, 2, 2)
        assert out.shape == (1, 1, 2, 2)
        assert np.all(out == 1.5)

    def test_upsample_nearest_block_structure(self):
        x = np.arange(4.0).reshape(1, 1, 2, 2)
        out = resize_spatial(x, 4, 4)
        # explicit index-map oracle: out[i, j] = x[i * 2 // 4, j * 2 // 4]
        want = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                want[i, j] = x[0, 0, i * 2 // 4, j * 2 // 4]
        assert np.array_equal(out[0, 0], want)

    def test_downsample_matches_bin_mean_oracle(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 3, 6, 8))
        out = resize_spatial(x, 3, 4)
        for i in range(3):
            for j in range(4):
                want = x[:, :, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].mean(axis=(2, 3))
                assert np.abs(out[:, :, i, j] - want).max() < 1e-12

    @given(
        h=st.integers(1, 9),
        w=st.integers(1, 9),
        factor=st.integers(1, 3),
        seed=st.integers(0, 2**16),
    )
    @settings(max_examples=30, deadline=None)
    def test_even_downsample_preserves_global_mean(self, h, w, factor, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1, 2, h * factor, w * factor))
        out = resize_spatial(x, h, w)
        assert abs(out.mean() - x.mean()) < 1e-12

    def test_mixed_axes(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(1, 1, 4, 2))
        out = resize_spatial(x, 2, 4)
        assert out.shape == (1, 1, 2, 4)


class TestSolveProjection:
    def test_identity_input_returns_y(self):
        rng = np.random.default_rng(10)
        y = rng.normal(size=(3, 4))
        a = solve_projection(np.eye(4), y, ridge=0.0)
        assert np.abs(a - y).max() < 1e-10

    def test_recovers_planted_matrix(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(4, 20))
        b = rng.normal(size=(3, 4))
        a = solve_projection(x, b @ x, ridge=0.0)
        assert np.abs(a - b).max() < 1e-8

    def test_residual_beats_perturbations(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(4, 20))
        y = rng.normal(size=(3, 20))
        a = solve_projection(x, y, ridge=0.0)
        base = np.linalg.norm(y - a @ x)
        for _ in range(1000):
            delta = rng.normal(scale=1e-3, size=a.shape)
            assert base <= np.linalg.norm(y - (a + delta) @ x) + 1e-12

    def test_normal_equation_residual(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(5, 30))
        y = rng.normal(size=(4, 30))
        a = solve_projection(x, y, ridge=0.0)
        assert np.abs(x @ (y - a @ x).T).max() < 1e-8

    def test_min_norm_fallback_on_singular_gram(self):
        rng = np.random.default_rng(14)
        # p=6 features from rank-3 structure: X X^T singular
        basis = rng.normal(size=(6, 3))
        x = basis @ rng.normal(size=(3, 10))
        y = rng.normal(size=(2, 10))
        a = solve_projection(x, y, ridge=0.0)
        assert np.all(np.isfinite(a))
        # least-squares optimality still holds on the span
        assert np.abs(x @ (y - a @ x).T).max() < 1e-8

    def test_default_ridge_close_to_exact_on_well_conditioned(self):
        rng = np.random.default_rng(15)
        x = rng.normal(size=(4, 40))
        b = rng.normal(size=(3, 4))
        a = solve_projection(x, b @ x)  # ridge=None -> automatic default
        assert np.abs(a - b).max() < 1e-5

    def test_sample_count_mismatch(self):
        with pytest.raises(DimensionError):
            solve_projection(np.ones((2, 5)), np.ones((2, 6)), ridge=0.0)

    def test_negative_ridge_rejected(self):
        with pytest.raises(ConfigError):
            solve_projection(np.ones((2, 5)), np.ones((2, 5)), ridge=-1.0)

    def test_nonfinite_rejected(self):
        x = np.ones((2, 5))
        y = np.ones((2, 5))
        y[0, 0] = np.inf
        with pytest.raises(NumericError):
            solve_projection(x, y, ridge=0.0)


class TestCenterColumns:
    def test_zero_mean_rows_unchanged(self):
        x = np.array([[1.0, -1.0], [2.0, -2.0]])
        assert np.array_equal(center_columns(x), x)

    def test_hand_case(self):
        assert np.array_equal(center_columns([[1.0, 2.0, 3.0]]), [[-1.0, 0.0, 1.0]])

    def test_matches_centering_matrix_oracle(self):
        rng = np.random.default_rng(16)
        x = rng.normal(size=(5, 9))
        n = x.shape[1]
        h = np.eye(n) - np.ones((n, n)) / n
        assert np.abs(center_columns(x) - x @ h).max() < 1e-12
