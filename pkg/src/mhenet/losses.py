"""Hybrid BCE + IoU deep-supervision loss over the three prediction heads.

BCE uses mean reduction: the raw per-pixel sum would scale the loss with the
pixel count (1.7e5 at 416x416) and with it the usable learning rate, so the
mean keeps optimizer settings at their customary scale.  IoU is a ratio and
is used as written.  Predictions are clamped to [delta, 1-delta] before the
logs; ground truth must be strictly binary.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, ShapeMismatch, add, clamp, log, mul, mean_all, sub, sum_all

PROB_CLAMP = 1e-7


def _check_pair(m, g):
    if m.shape != g.shape:
        raise ShapeMismatch(f"loss: prediction {m.shape} vs ground truth {g.shape}")
    gd = g.data if isinstance(g, Tensor) else g
    if not np.all((gd == 0.0) | (gd == 1.0)):
        raise ValueError("ground truth must be strictly binary (0/1)")


def bce_loss(m, g):
    """Mean binary cross entropy; returns a scalar tensor."""
    _check_pair(m, g)
    mc = clamp(m, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pos = mul(g, log(mc))
    neg = mul(sub(1.0, g), log(sub(1.0, mc)))
    return -mean_all(add(pos, neg))


def iou_loss(m, g):
    """1 - intersection/union on soft predictions; 0 when both maps are empty."""
    _check_pair(m, g)
    inter = sum_all(mul(m, g))
    union = sum_all(sub(add(m, g), mul(m, g)))
    if float(union.data.reshape(())) == 0.0:
        return Tensor.scalar(0.0, dtype=m.dtype)
    return sub(1.0, inter / union)


@dataclass
class LossBreakdown:
    bce: tuple                # per head
    iou: tuple
    total: float

    def __post_init__(self):
        assert abs(self.total - (sum(self.bce) + sum(self.iou))) <= 1e-9 * max(1.0, abs(self.total))


def total_loss(outputs, g):
    """Sum of BCE and IoU over the three heads.

    ``outputs`` is a ForwardOutput (or any object with ``heads``); ``g`` is
    the binary mask at head resolution.  Returns (breakdown, scalar tensor).
    """
    g = g if isinstance(g, Tensor) else Tensor(np.asarray(g))
    bces, ious = [], []
    total = None
    for m in outputs.heads:
        b = bce_loss(m, g)
        i = iou_loss(m, g)
        term = add(b, i)
        total = term if total is None else add(total, term)
        bces.append(b.item())
        ious.append(i.item())
    breakdown = LossBreakdown(tuple(bces), tuple(ious), total.item())
    return breakdown, total
