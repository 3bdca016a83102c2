"""Structured ops: convolution, pooling, resize, padding, normalization,
channel softmax."""

import numpy as np
import pytest

from mhenet import functional as F
from mhenet.gradcheck import grad_check
from mhenet.tensor import ShapeMismatch, Tensor, backward, sum_all
from oracles import avg_pool_loops, conv2d_loops


def rand_t(rng, shape, requires_grad=False):
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)


class TestConv2d:
    def test_ones_kernel_counts_overlap(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        k = Tensor(np.ones((1, 1, 3, 3)))
        y = F.conv2d(x, k, padding=1).data[0, 0]
        assert y[1, 1] == 9.0
        assert y[0, 0] == y[0, 2] == y[2, 0] == y[2, 2] == 4.0

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rand_t(rng, (2, 3, 5, 5))
        k = np.zeros((3, 3, 3, 3))
        for c in range(3):
            k[c, c, 1, 1] = 1.0
        y = F.conv2d(x, Tensor(k), padding=1)
        np.testing.assert_array_equal(y.data, x.data)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rand_t(rng, (2, 3, 8, 8))
        k = rand_t(rng, (4, 3, 3, 3))
        y = F.conv2d(x, k, padding=1)
        np.testing.assert_allclose(
            y.data, conv2d_loops(x.data, k.data, padding=1), atol=1e-12)

    def test_output_size_formula(self):
        x = Tensor(np.zeros((1, 2, 11, 11)))
        k = Tensor(np.zeros((3, 2, 3, 3)))
        assert F.conv2d(x, k, stride=2, padding=1).shape == (1, 3, 6, 6)

    def test_shape_mismatch_names_both(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        k = Tensor(np.zeros((3, 5, 3, 3)))
        with pytest.raises(ShapeMismatch, match=r"1, 2, 4, 4.*3, 5, 3, 3"):
            F.conv2d(x, k, padding=1)

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeMismatch):
            F.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))

    def test_bias_and_gradients(self):
        rng = np.random.default_rng(2)
        x = rand_t(rng, (2, 2, 5, 5), requires_grad=True)
        k = rand_t(rng, (3, 2, 3, 3), requires_grad=True)
        b = rand_t(rng, (1, 3, 1, 1), requires_grad=True)
        res = grad_check(lambda: F.conv2d(x, k, bias=b, stride=2, padding=1),
                         [x, k, b], tol=1e-6, max_coords=40, name="conv2d")
        assert res.passed, res


class TestReplicatePad:
    def test_forward_edges(self):
        x = Tensor(np.arange(4, dtype=np.float64).reshape(1, 1, 2, 2))
        y = F.replicate_pad(x, 1).data[0, 0]
        np.testing.assert_array_equal(y[0], [0, 0, 1, 1])
        np.testing.assert_array_equal(y[-1], [2, 2, 3, 3])

    def test_gradient(self):
        rng = np.random.default_rng(3)
        x = rand_t(rng, (1, 2, 3, 3), requires_grad=True)
        res = grad_check(lambda: F.replicate_pad(x, 2), [x], tol=1e-6,
                         max_coords=None, name="replicate_pad")
        assert res.passed, res


class TestPooling:
    def test_global_pools_on_constants(self):
        x = Tensor(np.ones((2, 3, 4, 4)))
        np.testing.assert_allclose(F.global_avg_pool(x).data, 1.0)
        np.testing.assert_allclose(F.global_max_pool(x).data, 1.0)

    def test_global_pools_small_example(self):
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2))
        assert F.global_avg_pool(x).item() == 2.5
        assert F.global_max_pool(x).item() == 4.0

    def test_pools_match_loop_oracle(self):
        rng = np.random.default_rng(4)
        x = rand_t(rng, (2, 4, 8, 8))
        np.testing.assert_allclose(
            F.global_avg_pool(x).data,
            x.data.mean(axis=(2, 3), keepdims=True), atol=1e-12)
        np.testing.assert_allclose(
            F.avg_pool(x, 3, 1, 1).data, avg_pool_loops(x.data, 3, 1, 1),
            atol=1e-12)

    def test_avg_pool_window_precondition(self):
        with pytest.raises(ShapeMismatch):
            F.avg_pool(Tensor(np.zeros((1, 1, 2, 2))), 3)

    def test_max_pool_gradient_routes_to_argmax(self):
        x = Tensor(np.array([[1.0, 5.0], [5.0, 0.0]]).reshape(1, 1, 2, 2),
                   requires_grad=True)
        backward(sum_all(F.global_max_pool(x)))
        # ties break to the first flat index
        np.testing.assert_array_equal(x.grad[0, 0], [[0.0, 1.0], [0.0, 0.0]])

    def test_pool_gradients(self):
        rng = np.random.default_rng(5)
        x = rand_t(rng, (2, 3, 6, 6), requires_grad=True)
        for fn, name in ((lambda: F.avg_pool(x, 3, 1, 1), "avg_pool"),
                         (lambda: F.global_avg_pool(x), "gap"),
                         (lambda: F.global_max_pool(x), "gmp")):
            res = grad_check(fn, [x], tol=1e-6, max_coords=48, name=name)
            assert res.passed, res


class TestResize:
    def test_constant_any_factor(self):
        x = Tensor(np.full((1, 2, 4, 4), 0.3))
        for factor in (2, 4):
            up = F.bilinear_resize(x, factor, "up")
            np.testing.assert_allclose(up.data, 0.3, atol=1e-15)
            assert up.shape == (1, 2, 4 * factor, 4 * factor)

    def test_hand_computed_two_by_two(self):
        x = Tensor(np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2))
        got = F.bilinear_resize(x, 2, "up").data[0, 0]
        want = np.array([[-0.75, -0.25, 0.25, 0.75],
                         [0.25, 0.75, 1.25, 1.75],
                         [1.25, 1.75, 2.25, 2.75],
                         [2.25, 2.75, 3.25, 3.75]])
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_ramp_round_trip(self):
        r = np.arange(6, dtype=np.float64)
        ramp = Tensor((r[:, None] + 2 * r[None, :])[None, None])
        back = F.bilinear_resize(F.bilinear_resize(ramp, 2, "up"), 2, "down")
        np.testing.assert_allclose(back.data, ramp.data, atol=1e-12)

    def test_indivisible_down_rejected(self):
        with pytest.raises(ShapeMismatch):
            F.bilinear_resize(Tensor(np.zeros((1, 1, 5, 5))), 2, "down")

    def test_bad_factor_rejected(self):
        with pytest.raises(ValueError):
            F.bilinear_resize(Tensor(np.zeros((1, 1, 4, 4))), 3, "up")

    def test_gradient(self):
        rng = np.random.default_rng(6)
        x = rand_t(rng, (1, 2, 4, 4), requires_grad=True)
        for fn, name in ((lambda: F.bilinear_resize(x, 2, "up"), "resize_up"),
                         (lambda: F.bilinear_resize(x, 2, "down"), "resize_down"),
                         (lambda: F.resize_to(x, 3, 7), "resize_to")):
            res = grad_check(fn, [x], tol=1e-6, max_coords=None, name=name)
            assert res.passed, res


class TestSoftmaxChannels:
    def test_equal_logits(self):
        x = Tensor(np.zeros((1, 2, 2, 2)))
        np.testing.assert_allclose(F.softmax_channels(x, 2).data, 0.5)

    def test_analytic_pair(self):
        x = Tensor(np.stack([np.zeros((2, 2)), np.full((2, 2), np.log(3.0))])[None])
        y = F.softmax_channels(x, 2).data
        np.testing.assert_allclose(y[0, 0], 0.25, atol=1e-12)
        np.testing.assert_allclose(y[0, 1], 0.75, atol=1e-12)

    def test_groups_sum_to_one(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((2, 6, 4, 4)) * 5)
        y = F.softmax_channels(x, 3).data.reshape(2, 3, 2, 4, 4)
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)

    def test_indivisible_rejected(self):
        with pytest.raises(ShapeMismatch):
            F.softmax_channels(Tensor(np.zeros((1, 5, 2, 2))), 2)

    def test_gradient(self):
        rng = np.random.default_rng(8)
        x = rand_t(rng, (1, 4, 3, 3), requires_grad=True)
        res = grad_check(lambda: F.softmax_channels(x, 2), [x], tol=1e-5,
                         max_coords=None, name="softmax_channels")
        assert res.passed, res


class TestBatchNorm:
    def _params(self, c, gamma=1.0, beta=0.0):
        g = Tensor(np.full((1, c, 1, 1), gamma), requires_grad=True)
        b = Tensor(np.full((1, c, 1, 1), beta), requires_grad=True)
        return g, b, F.RunningStats(c)

    def test_eval_identity_stats(self):
        rng = np.random.default_rng(9)
        x = rand_t(rng, (1, 3, 4, 4))
        g, b, stats = self._params(3)
        y = F.batch_norm(x, g, b, stats, "eval")
        np.testing.assert_allclose(y.data, x.data / np.sqrt(1 + F.BN_EPS),
                                   atol=1e-12)

    def test_train_output_moments(self):
        rng = np.random.default_rng(10)
        x = rand_t(rng, (4, 3, 5, 5))
        g, b, stats = self._params(3)
        y = F.batch_norm(x, g, b, stats, "train").data
        np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
        np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-3)

    def test_affine_applies(self):
        rng = np.random.default_rng(11)
        x = rand_t(rng, (4, 2, 3, 3))
        g1, b1, s1 = self._params(2)
        g2, b2, s2 = self._params(2, gamma=2.0, beta=1.0)
        base = F.batch_norm(x, g1, b1, s1, "train").data
        scaled = F.batch_norm(x, g2, b2, s2, "train").data
        np.testing.assert_allclose(scaled, 2.0 * base + 1.0, atol=1e-12)

    def test_running_stats_update(self):
        rng = np.random.default_rng(12)
        x = rand_t(rng, (8, 2, 4, 4))
        g, b, stats = self._params(2)
        F.batch_norm(x, g, b, stats, "train")
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        m = 8 * 4 * 4
        var_u = x.data.var(axis=(0, 2, 3), keepdims=True) * m / (m - 1)
        np.testing.assert_allclose(stats.mean, 0.1 * mu, atol=1e-12)
        np.testing.assert_allclose(stats.var, 0.9 + 0.1 * var_u, atol=1e-12)

    def test_batch_one_rejected_in_train(self):
        g, b, stats = self._params(2)
        with pytest.raises(ValueError):
            F.batch_norm(Tensor(np.zeros((1, 2, 3, 3))), g, b, stats, "train")

    def test_gradients_both_modes(self):
        rng = np.random.default_rng(13)
        x = rand_t(rng, (3, 2, 4, 4), requires_grad=True)
        g, b, stats = self._params(2)
        for mode in ("train", "eval"):
            res = grad_check(lambda m=mode: F.batch_norm(x, g, b, stats, m),
                             [x, g, b], tol=1e-5, max_coords=40,
                             name=f"bn_{mode}")
            assert res.passed, res
