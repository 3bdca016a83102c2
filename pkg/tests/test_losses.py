"""Hybrid loss: analytic values, loop-oracle agreement, gradients."""

import math

import numpy as np
import pytest

from mhenet.gradcheck import grad_check
from mhenet.losses import LossBreakdown, bce_loss, iou_loss, total_loss
from mhenet.tensor import ShapeMismatch, Tensor

RNG = lambda s: np.random.default_rng(s)


def _mask(rng, shape=(1, 1, 4, 4), frac=0.5):
    return Tensor((rng.random(shape) < frac).astype(np.float64))


class TestBce:
    def test_perfect_prediction_near_zero(self):
        g = _mask(RNG(0))
        assert bce_loss(Tensor(g.data.copy()), g).item() <= 1e-6

    def test_uniform_half_is_log_two(self):
        g = _mask(RNG(1))
        m = Tensor(np.full((1, 1, 4, 4), 0.5))
        assert abs(bce_loss(m, g).item() - math.log(2.0)) < 1e-12
        g2 = Tensor(np.zeros((1, 1, 4, 4)))
        assert abs(bce_loss(m, g2).item() - math.log(2.0)) < 1e-12

    def test_matches_pixel_loop(self):
        rng = RNG(2)
        m = Tensor(rng.uniform(0.01, 0.99, size=(1, 1, 4, 4)))
        g = _mask(rng)
        total = 0.0
        for p, t in zip(m.data.ravel(), g.data.ravel()):
            total += -(t * math.log(p) + (1 - t) * math.log(1 - p))
        assert abs(bce_loss(m, g).item() - total / 16.0) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            bce_loss(Tensor(np.full((1, 1, 2, 2), 0.5)), Tensor(np.zeros((1, 1, 3, 3))))

    def test_non_binary_gt_rejected(self):
        m = Tensor(np.full((1, 1, 2, 2), 0.5))
        with pytest.raises(ValueError):
            bce_loss(m, Tensor(np.full((1, 1, 2, 2), 0.3)))


class TestIou:
    def test_perfect_overlap(self):
        g = _mask(RNG(3))
        assert iou_loss(Tensor(g.data.copy()), g).item() == 0.0

    def test_disjoint(self):
        g = _mask(RNG(4))
        assert iou_loss(Tensor(1.0 - g.data), g).item() == 1.0

    def test_half_uniform_closed_form(self):
        g = Tensor(np.concatenate([np.ones((1, 1, 2, 4)), np.zeros((1, 1, 2, 4))], axis=2))
        m = Tensor(np.full((1, 1, 4, 4), 0.5))
        assert abs(iou_loss(m, g).item() - 2.0 / 3.0) < 1e-12

    def test_both_empty_is_zero(self):
        z = Tensor(np.zeros((1, 1, 3, 3)))
        assert iou_loss(z, Tensor(np.zeros((1, 1, 3, 3)))).item() == 0.0

    def test_range(self):
        rng = RNG(5)
        for _ in range(20):
            m = Tensor(rng.uniform(0, 1, size=(1, 1, 5, 5)))
            g = _mask(rng, (1, 1, 5, 5), frac=rng.uniform(0.1, 0.9))
            v = iou_loss(m, g).item()
            assert 0.0 <= v <= 1.0


class _Heads:
    def __init__(self, *tensors):
        self.heads = tensors


class TestTotal:
    def test_three_perfect_heads(self):
        g = _mask(RNG(6))
        heads = _Heads(*(Tensor(g.data.copy()) for _ in range(3)))
        bd, total = total_loss(heads, g)
        assert total.item() < 1e-6
        assert bd.total == total.item()

    def test_breakdown_sums_to_total(self):
        rng = RNG(7)
        heads = _Heads(*(Tensor(rng.uniform(0.05, 0.95, size=(1, 1, 4, 4)))
                         for _ in range(3)))
        g = _mask(rng)
        bd, total = total_loss(heads, g)
        assert abs((sum(bd.bce) + sum(bd.iou)) - total.item()) < 1e-12

    def test_breakdown_invariant_enforced(self):
        with pytest.raises(AssertionError):
            LossBreakdown((0.5,), (0.5,), 2.0)

    def test_permutation_invariance(self):
        rng = RNG(8)
        m = rng.uniform(0.01, 0.99, size=16)
        g = (rng.random(16) < 0.4).astype(np.float64)
        perm = rng.permutation(16)
        a = bce_loss(Tensor(m.reshape(1, 1, 4, 4)), Tensor(g.reshape(1, 1, 4, 4))).item()
        b = bce_loss(Tensor(m[perm].reshape(1, 1, 4, 4)),
                     Tensor(g[perm].reshape(1, 1, 4, 4))).item()
        assert abs(a - b) < 1e-12
        ai = iou_loss(Tensor(m.reshape(1, 1, 4, 4)), Tensor(g.reshape(1, 1, 4, 4))).item()
        bi = iou_loss(Tensor(m[perm].reshape(1, 1, 4, 4)),
                      Tensor(g[perm].reshape(1, 1, 4, 4))).item()
        assert abs(ai - bi) < 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = RNG(9)
        heads = [Tensor(rng.uniform(0.1, 0.9, size=(1, 1, 4, 4)), requires_grad=True)
                 for _ in range(3)]
        g = _mask(rng)

        def fn():
            _, total = total_loss(_Heads(*heads), g)
            return total

        res = grad_check(fn, heads, tol=1e-4, max_coords=None, name="total_loss")
        assert res.passed, res
