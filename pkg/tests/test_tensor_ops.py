"""Forward-value checks for the tensor ops, each against an independent
oracle (nested loops, hand arithmetic, or closed forms)."""

import numpy as np
import pytest

from barnetkit.errors import ConfigError, DimensionError
from barnetkit.tensor import (
    Tensor, add, avg_pool2, batch_norm, concat_channels, conv2d,
    global_avg_pool, l2_normalize, matmul, mul, relu, sigmoid, signed_sqrt,
    slice_channels, softmax_channels, log_softmax_channels, sum_spatial,
    upsample_nearest,
)


def matmul_oracle(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for kk in range(k):
                out[i, j] += a[i, kk] * b[kk, j]
    return out


def conv2d_oracle(x, w, stride, pad):
    """Direct six-loop cross-correlation."""
    c, h, wd = x.shape
    f, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    out = np.zeros((f, ho, wo))
    for fi in range(f):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for ci in range(c):
                    for di in range(k):
                        for dj in range(k):
                            acc += xp[ci, stride * i + di, stride * j + dj] * w[fi, ci, di, dj]
                out[fi, i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = matmul(a, Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, a.data)

    def test_outer_product_against_loop_oracle(self):
        a = np.array([[1.0], [2.0]])
        b = np.array([[1.0, 2.0]])
        expected = matmul_oracle(a, b)
        np.testing.assert_array_equal(expected, [[1.0, 2.0], [2.0, 4.0]])
        np.testing.assert_array_equal(matmul(Tensor(a), Tensor(b)).data, expected)

    def test_random_against_loop_oracle(self, rng):
        a = rng.standard_normal((4, 6))
        b = rng.standard_normal((6, 3))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data,
                                   matmul_oracle(a, b), rtol=1e-13)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestConv2d:
    def test_1x1_identity_kernel(self, rng):
        x = rng.standard_normal((1, 5, 5))
        w = np.ones((1, 1, 1, 1))
        out = conv2d(Tensor(x), Tensor(w))
        np.testing.assert_array_equal(out.data, x)

    def test_box_kernel_on_impulse(self):
        x = np.zeros((1, 5, 5))
        x[0, 2, 2] = 1.0
        w = np.ones((1, 1, 3, 3))
        out = conv2d(Tensor(x), Tensor(w), stride=1, pad=1)
        expected = conv2d_oracle(x, w, 1, 1)
        np.testing.assert_array_equal(out.data, expected)
        # the impulse spreads into a 3x3 box of ones
        assert out.data.sum() == 9.0
        np.testing.assert_array_equal(out.data[0, 1:4, 1:4], np.ones((3, 3)))

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_random_against_loop_oracle(self, rng, stride, pad):
        x = rng.standard_normal((2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        out = conv2d(Tensor(x), Tensor(w), stride=stride, pad=pad)
        np.testing.assert_allclose(out.data, conv2d_oracle(x, w, stride, pad),
                                   atol=1e-10, rtol=0)

    def test_non_integral_output_rejected(self):
        x = Tensor(np.ones((1, 6, 6)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        with pytest.raises(DimensionError):
            conv2d(x, w, stride=2, pad=0)  # (6-3)/2 not integral

    def test_even_kernel_rejected(self):
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))))


class TestGlobalAvgPool:
    def test_constant_map(self):
        out = global_avg_pool(Tensor(np.full((3, 4, 5), 2.5)))
        np.testing.assert_array_equal(out.data, [2.5, 2.5, 2.5])

    def test_hand_mean(self):
        out = global_avg_pool(Tensor([[[1.0, 3.0], [5.0, 7.0]]]))
        np.testing.assert_array_equal(out.data, [4.0])


class TestUpsample:
    def test_factor_two_replication(self):
        x = Tensor([[[1.0, 2.0], [3.0, 4.0]]])
        out = upsample_nearest(x, 2)
        expected = np.array([[[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]], dtype=float)
        np.testing.assert_array_equal(out.data, expected)

    def test_factor_one_disallowed(self):
        with pytest.raises(ConfigError):
            upsample_nearest(Tensor(np.ones((1, 2, 2))), 1)

    @pytest.mark.parametrize("factor", [2, 4, 8])
    def test_sum_scales_by_factor_squared(self, rng, factor):
        x = rng.standard_normal((3, 4, 4))
        out = upsample_nearest(Tensor(x), factor)
        assert out.shape == (3, 4 * factor, 4 * factor)
        np.testing.assert_allclose(out.data.sum(), factor ** 2 * x.sum(), rtol=1e-12)


class TestAvgPool2:
    def test_matches_block_loop(self, rng):
        x = rng.standard_normal((3, 6, 4))
        out = avg_pool2(Tensor(x))
        assert out.shape == (3, 3, 2)
        for c in range(3):
            for i in range(3):
                for j in range(2):
                    block = x[c, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                    np.testing.assert_allclose(out.data[c, i, j], block.mean())

    def test_inverts_upsample_on_coarse_content(self, rng):
        x = rng.standard_normal((2, 3, 5))
        back = avg_pool2(upsample_nearest(Tensor(x), 2))
        np.testing.assert_allclose(back.data, x, rtol=1e-12)

    def test_odd_extent_rejected(self):
        with pytest.raises(DimensionError):
            avg_pool2(Tensor(np.ones((1, 3, 4))))


class TestConcat:
    def test_single_input_passthrough(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 3)))
        assert concat_channels([x]) is x

    def test_round_trip(self, rng):
        a = rng.standard_normal((2, 3, 3))
        b = rng.standard_normal((3, 3, 3))
        cat = concat_channels([Tensor(a), Tensor(b)])
        assert cat.shape == (5, 3, 3)
        np.testing.assert_array_equal(slice_channels(cat, 0, 2).data, a)
        np.testing.assert_array_equal(slice_channels(cat, 2, 5).data, b)

    def test_spatial_mismatch(self):
        with pytest.raises(DimensionError):
            concat_channels([Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 3, 3)))])

    def test_vector_concat(self):
        cat = concat_channels([Tensor([1.0, 2.0]), Tensor([3.0])])
        np.testing.assert_array_equal(cat.data, [1.0, 2.0, 3.0])


class TestSignedSqrt:
    def test_definition_points(self):
        out = signed_sqrt(Tensor([0.0, 4.0, -4.0]))
        np.testing.assert_array_equal(out.data, [0.0, 2.0, -2.0])

    def test_monotone_on_random_vectors(self, rng):
        for _ in range(20):
            x = np.sort(rng.uniform(-10, 10, size=32))
            out = signed_sqrt(Tensor(x)).data
            assert np.all(np.diff(out) >= 0)
            strict = np.diff(x) > 0
            assert np.all(np.diff(out)[strict] > 0)


class TestL2Normalize:
    def test_hand_norm(self):
        out = l2_normalize(Tensor([3.0, 4.0]))
        np.testing.assert_allclose(out.data, [0.6, 0.8], rtol=1e-15)

    def test_zero_tensor_guard(self):
        out = l2_normalize(Tensor(np.zeros((4, 4))))
        np.testing.assert_array_equal(out.data, np.zeros((4, 4)))

    def test_unit_norm_above_eps(self, rng):
        x = rng.standard_normal((5, 5))
        out = l2_normalize(Tensor(x))
        np.testing.assert_allclose(np.sqrt((out.data ** 2).sum()), 1.0, rtol=1e-12)


class TestActivations:
    def test_relu_points(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])

    def test_sigmoid_zero(self):
        assert sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_sigmoid_extremes_finite(self):
        out = sigmoid(Tensor([-1000.0, 1000.0])).data
        assert out[0] == 0.0 and out[1] == 1.0

    def test_softmax_equal_logits(self):
        out = softmax_channels(Tensor(np.zeros((4, 2, 2))))
        np.testing.assert_allclose(out.data, 0.25)

    def test_softmax_distribution_properties(self, rng):
        x = rng.standard_normal((5, 3, 3)) * 4
        out = softmax_channels(Tensor(x)).data
        np.testing.assert_allclose(out.sum(axis=0), 1.0, atol=1e-6)
        assert np.all(out > 0) and np.all(out < 1)

    def test_log_softmax_matches_log_of_softmax(self, rng):
        x = rng.standard_normal((4, 3, 3))
        np.testing.assert_allclose(log_softmax_channels(Tensor(x)).data,
                                   np.log(softmax_channels(Tensor(x)).data), rtol=1e-12)


class TestBatchNorm:
    def _affine(self, c):
        return (Tensor(np.ones(c)), Tensor(np.zeros(c)),
                np.zeros(c), np.ones(c))

    def test_standardized_input_passthrough(self, rng):
        x = rng.standard_normal((2, 8, 8))
        # force exact zero mean, unit (biased) variance per channel
        x = (x - x.mean(axis=(1, 2), keepdims=True)) / x.std(axis=(1, 2), keepdims=True)
        g, b, rm, rv = self._affine(2)
        out = batch_norm(Tensor(x), g, b, rm, rv, training=True)
        # the eps inside sqrt(var + eps) perturbs by eps/2 relative
        np.testing.assert_allclose(out.data, x, rtol=1e-5, atol=1e-12)

    def test_beta_shift_appears_in_mean(self, rng):
        x = Tensor(rng.standard_normal((3, 6, 6)) * 2 + 1)
        g = Tensor(np.ones(3))
        b = Tensor(np.array([0.5, -1.0, 2.0]))
        out = batch_norm(x, g, b, np.zeros(3), np.ones(3), training=True)
        np.testing.assert_allclose(out.data.mean(axis=(1, 2)), b.data, atol=1e-12)

    def test_inference_uses_running_stats(self, rng):
        x = rng.standard_normal((2, 4, 4))
        rm = np.array([1.0, -1.0])
        rv = np.array([4.0, 0.25])
        g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
        out = batch_norm(Tensor(x), g, b, rm, rv, training=False, eps=0.0)
        expected = (x - rm[:, None, None]) / np.sqrt(rv)[:, None, None]
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)


class TestReductions:
    def test_sum_spatial(self, rng):
        x = rng.standard_normal((3, 4, 5))
        out = sum_spatial(Tensor(x))
        np.testing.assert_allclose(out.data, x.sum(axis=(1, 2)), rtol=1e-12)

    def test_elementwise_shape_guard(self):
        with pytest.raises(DimensionError):
            add(Tensor(np.ones(3)), Tensor(np.ones(4)))
        with pytest.raises(DimensionError):
            mul(Tensor(np.ones((2, 2))), Tensor(np.ones(4)))
