"""Structured tensor operations: convolution, pooling, resizing, padding,
normalization, and the channel-group softmax.

Convolution is cross-correlation (kernels are not flipped).  Padding here is
zero padding; network blocks that must preserve spatially constant inputs
compose :func:`replicate_pad` with an unpadded convolution instead.
"""

import numpy as np

from . import backend
from .tensor import (Tensor, ShapeMismatch, record, stats_updates_enabled)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def conv2d(x, kernel, bias=None, stride=1, padding=0, groups=1):
    """Cross-correlate ``x`` (N,Cin,H,W) with ``kernel`` (Cout,Cin/groups,k,k).

    Output spatial size is floor((H + 2*padding - k)/stride) + 1.  ``bias``
    is an optional (1,Cout,1,1) tensor added per output channel.
    """
    n, cin, h, w = x.shape
    cout, cpg, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeMismatch(f"kernel must be square with odd size, got {kernel.shape}")
    if cpg * groups != cin:
        raise ShapeMismatch(
            f"conv2d: input {x.shape} incompatible with kernel {kernel.shape} "
            f"(groups={groups})")
    if cout % groups != 0:
        raise ShapeMismatch(
            f"conv2d: output channels {cout} not divisible by groups {groups}")
    if bias is not None and bias.shape != (1, cout, 1, 1):
        raise ShapeMismatch(
            f"conv2d: bias shape {bias.shape} != (1, {cout}, 1, 1)")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeMismatch(
            f"conv2d: input {x.shape} smaller than kernel {kernel.shape} "
            f"with padding {padding}")

    y = backend.conv2d_forward(x.data, kernel.data, stride, padding, groups)
    if bias is not None:
        y = y + bias.data
    out = Tensor(y)

    if bias is None:
        def rule(gy):
            gx = backend.conv2d_backward_input(
                gy, kernel.data, x.shape, stride, padding, groups)
            gk = backend.conv2d_backward_kernel(
                gy, x.data, kernel.shape, stride, padding, groups)
            return gx, gk

        return record(out, (x, kernel), rule, "conv2d")

    def rule(gy):
        gx = backend.conv2d_backward_input(
            gy, kernel.data, x.shape, stride, padding, groups)
        gk = backend.conv2d_backward_kernel(
            gy, x.data, kernel.shape, stride, padding, groups)
        gb = gy.sum(axis=(0, 2, 3), keepdims=True)
        return gx, gk, gb

    return record(out, (x, kernel, bias), rule, "conv2d")


def replicate_pad(x, p):
    """Edge-replication padding by ``p`` pixels on every spatial side."""
    h, w = x.shape[2], x.shape[3]
    rows = np.clip(np.arange(-p, h + p), 0, h - 1)
    cols = np.clip(np.arange(-p, w + p), 0, w - 1)
    out = Tensor(x.data[:, :, rows[:, None], cols[None, :]])

    def rule(gy):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), slice(None), rows[:, None], cols[None, :]), gy)
        return (gx,)

    return record(out, (x,), rule, "replicate_pad")


def avg_pool(x, k, stride=1, padding=0):
    """Windowed mean; padded positions are excluded from the denominator, so
    constant inputs stay constant."""
    if k > x.shape[2] or k > x.shape[3]:
        raise ShapeMismatch(f"avg_pool: window {k} exceeds input {x.shape}")
    y = backend.avg_pool_forward(x.data, k, stride, padding)
    out = Tensor(y)

    def rule(gy):
        return (backend.avg_pool_backward(gy, x.shape, k, stride, padding),)

    return record(out, (x,), rule, "avg_pool")


def global_avg_pool(x):
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True))

    def rule(gy):
        return (np.broadcast_to(gy / (h * w), x.shape).copy(),)

    return record(out, (x,), rule, "global_avg_pool")


def global_max_pool(x):
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)                 # first maximum, deterministic
    out = Tensor(flat.max(axis=2).reshape(n, c, 1, 1))

    def rule(gy):
        gx = np.zeros_like(flat)
        ii, jj = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        gx[ii, jj, idx] = gy.reshape(n, c)
        return (gx.reshape(x.shape),)

    return record(out, (x,), rule, "global_max_pool")


def resize_to(x, out_h, out_w):
    """Bilinear resample to an explicit size (align_corners=False; border
    samples extrapolate from the outermost pixel pair)."""
    out = Tensor(backend.bilinear_forward(x.data, out_h, out_w))

    def rule(gy):
        return (backend.bilinear_backward(gy, x.shape[2], x.shape[3]),)

    return record(out, (x,), rule, "resize_to")


def bilinear_resize(x, factor, mode):
    """Exact-factor up/down resampling; factor must be 2 or 4 and, for
    ``down``, must divide the spatial size."""
    if factor not in (2, 4):
        raise ValueError(f"resize factor must be 2 or 4, got {factor}")
    h, w = x.shape[2], x.shape[3]
    if mode == "up":
        return resize_to(x, h * factor, w * factor)
    if mode == "down":
        if h % factor or w % factor:
            raise ShapeMismatch(
                f"bilinear_resize: {h}x{w} not divisible by factor {factor}")
        return resize_to(x, h // factor, w // factor)
    raise ValueError(f"mode must be 'up' or 'down', got {mode!r}")


def softmax_channels(x, groups):
    """Softmax across ``groups`` equal channel blocks at every (n, h, w).

    Channels are viewed as (groups, C/groups); the normalization runs over
    the group axis, max-subtracted for stability.
    """
    n, c, h, w = x.shape
    if c % groups:
        raise ShapeMismatch(f"channels {c} not divisible by groups {groups}")
    v = x.data.reshape(n, groups, c // groups, h, w)
    v = v - v.max(axis=1, keepdims=True)
    e = np.exp(v)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y.reshape(x.shape))

    def rule(gy):
        gys = gy.reshape(n, groups, c // groups, h, w)
        dot = (gys * y).sum(axis=1, keepdims=True)
        return ((y * (gys - dot)).reshape(x.shape),)

    return record(out, (x,), rule, "softmax_channels")


class RunningStats:
    """Per-channel running mean/variance for batch normalization."""

    __slots__ = ("mean", "var")

    def __init__(self, channels, dtype=np.float64):
        self.mean = np.zeros((1, channels, 1, 1), dtype=dtype)
        self.var = np.ones((1, channels, 1, 1), dtype=dtype)


def batch_norm(x, gamma, beta, stats, mode, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Batch normalization over (N, H, W) per channel.

    ``train`` normalizes by batch statistics (batch size >= 2 required) and
    updates ``stats`` in place with the unbiased batch variance; ``eval``
    normalizes by the running statistics.
    """
    n, c, h, w = x.shape
    if mode == "train":
        if n < 2:
            raise ValueError(
                "batch_norm train mode needs batch >= 2 (variance undefined)")
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)
        if stats_updates_enabled():
            m = n * h * w
            unbiased = var * (m / (m - 1))
            stats.mean *= (1.0 - momentum)
            stats.mean += momentum * mu
            stats.var *= (1.0 - momentum)
            stats.var += momentum * unbiased
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv
        out = Tensor(gamma.data * xhat + beta.data)

        def rule(gy):
            m = n * h * w
            gxhat = gy * gamma.data
            mean_g = gxhat.mean(axis=(0, 2, 3), keepdims=True)
            mean_gx = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            gx = inv * (gxhat - mean_g - xhat * mean_gx)
            ggamma = (gy * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gbeta = gy.sum(axis=(0, 2, 3), keepdims=True)
            return gx, ggamma, gbeta

        return record(out, (x, gamma, beta), rule, "batch_norm")

    if mode == "eval":
        inv = 1.0 / np.sqrt(stats.var + eps)
        xhat = (x.data - stats.mean) * inv
        out = Tensor(gamma.data * xhat + beta.data)

        def rule(gy):
            gx = gy * gamma.data * inv
            ggamma = (gy * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gbeta = gy.sum(axis=(0, 2, 3), keepdims=True)
            return gx, ggamma, gbeta

        return record(out, (x, gamma, beta), rule, "batch_norm_eval")

    raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
