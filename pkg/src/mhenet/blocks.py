"""Reusable network blocks: CBR, the learnable gradient convolution, the
texture / semantic / geometry enhancement blocks, channel attention, the
modality-weight head, and the prediction head.

All block convolutions use edge-replication same-padding, so a spatially
constant input stays constant through any block (the geometry and texture
gates rely on this).  CBR convolutions carry no bias; the normalization
affine provides the shift.
"""

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .params import ParamStore
from .tensor import (Tensor, ShapeMismatch, add, mul, relu, sigmoid,
                     split_channels, sqrt_eps, sub)

SOBEL_H = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_V = SOBEL_H.T.copy()

LGCONV_EPS = 1e-6
CA_RATIO = 4


def _conv_init(rng, cout, cin, k, dtype):
    bound = 1.0 / np.sqrt(cin * k * k)
    return rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype)


def _same_conv(x, kernel, bias=None, stride=1, groups=1):
    """Same-size (for stride 1) convolution under replicate padding."""
    k = kernel.shape[2]
    pad = (k - 1) // 2
    if pad:
        x = F.replicate_pad(x, pad)
    return F.conv2d(x, kernel, bias=bias, stride=stride, padding=0, groups=groups)


# -- CBR -----------------------------------------------------------------------

@dataclass
class CbrParams:
    kernel: Tensor
    gamma: Tensor
    beta: Tensor
    stats: F.RunningStats
    stride: int = 1


def make_cbr(store: ParamStore, name, cin, cout, k, rng, dtype, stride=1):
    kernel = store.add_param(f"{name}.kernel", _conv_init(rng, cout, cin, k, dtype), dtype)
    gamma = store.add_param(f"{name}.gamma", np.ones((1, cout, 1, 1)), dtype)
    beta = store.add_param(f"{name}.beta", np.zeros((1, cout, 1, 1)), dtype)
    stats = store.add_stats(f"{name}.norm", cout, dtype)
    return CbrParams(kernel, gamma, beta, stats, stride)


def cbr(x, p: CbrParams, mode):
    y = _same_conv(x, p.kernel, stride=p.stride)
    y = F.batch_norm(y, p.gamma, p.beta, p.stats, mode)
    return relu(y)


# -- learnable gradient convolution ---------------------------------------------

@dataclass
class LgconvParams:
    w_mod: Tensor            # (C,1,3,3) learnable modulation, starts at ones
    p_h: Tensor              # fixed Sobel bases, never optimized
    p_v: Tensor
    eps: float = LGCONV_EPS


def make_lgconv(store: ParamStore, name, channels, rng, dtype):
    w_mod = store.add_param(f"{name}.w_mod", np.ones((channels, 1, 3, 3)), dtype)
    p_h = store.add_buffer(f"{name}.p_h", SOBEL_H.reshape(1, 1, 3, 3), dtype)
    p_v = store.add_buffer(f"{name}.p_v", SOBEL_V.reshape(1, 1, 3, 3), dtype)
    return LgconvParams(w_mod, p_h, p_v)


def lgconv(x, p: LgconvParams):
    """Depthwise gradient magnitude with Sobel-initialized kernels.

    Each channel is cross-correlated with its modulated horizontal and
    vertical basis; the outputs combine as sqrt(gh^2 + gv^2 + eps).  With the
    modulation at ones this is the classical Sobel magnitude (away from the
    replicated border).
    """
    c = x.shape[1]
    if p.w_mod.shape[0] != c:
        raise ShapeMismatch(
            f"lgconv: input {x.shape} vs modulation {p.w_mod.shape}")
    kh = mul(p.w_mod, p.p_h)
    kv = mul(p.w_mod, p.p_v)
    xp = F.replicate_pad(x, 1)
    gh = F.conv2d(xp, kh, padding=0, groups=c)
    gv = F.conv2d(xp, kv, padding=0, groups=c)
    return sqrt_eps(add(mul(gh, gh), mul(gv, gv)), p.eps)


# -- texture block ---------------------------------------------------------------

@dataclass
class TextureBlockParams:
    branches: dict            # kernel size -> CbrParams, sizes 1/3/5
    merge: CbrParams
    avg_mode: str = "local3"  # or "global"


def make_texture_block(store, name, channels, rng, dtype, avg_mode="local3"):
    branches = {k: make_cbr(store, f"{name}.branch{k}", channels, channels, k, rng, dtype)
                for k in (1, 3, 5)}
    merge = make_cbr(store, f"{name}.merge", channels, channels, 3, rng, dtype)
    return TextureBlockParams(branches, merge, avg_mode)


def texture_block(x, p: TextureBlockParams, mode):
    """Multi-kernel texture aggregation gated by local contrast.

    The sigmoid gate compares the aggregated map against the local average of
    the input, suppressing flat regions; the output magnitude is therefore
    bounded by the aggregated map's.
    """
    agg = None
    for k in (1, 3, 5):
        b = cbr(x, p.branches[k], mode)
        agg = b if agg is None else add(agg, b)
    m = cbr(agg, p.merge, mode)
    if p.avg_mode == "local3":
        avg = F.avg_pool(x, 3, stride=1, padding=1)
    else:
        avg = F.global_avg_pool(x)
    gate = sigmoid(sub(m, avg))
    return mul(gate, m)


# -- semantic block ---------------------------------------------------------------

@dataclass
class SemanticBlockParams:
    down1: CbrParams
    down2: CbrParams


def make_semantic_block(store, name, channels, rng, dtype):
    return SemanticBlockParams(
        make_cbr(store, f"{name}.down1", channels, channels, 3, rng, dtype),
        make_cbr(store, f"{name}.down2", channels, channels, 3, rng, dtype))


def semantic_block(s, p: SemanticBlockParams, mode):
    """Context pyramid over the coarse feature, gated by its global average,
    then upsampled to twice the input resolution.

    Internal resampling is size-targeted (down to ceil(H/2)) so odd input
    sizes, which appear at the deepest pyramid level, are handled; on even
    sizes this is exactly factor-2 resizing.
    """
    h, w = s.shape[2], s.shape[3]
    h1, w1 = (h + 1) // 2, (w + 1) // 2
    s1 = cbr(F.resize_to(s, h1, w1), p.down1, mode)
    s2 = cbr(F.resize_to(s1, (h1 + 1) // 2, (w1 + 1) // 2), p.down2, mode)
    ctx = add(F.resize_to(s1, h, w), F.resize_to(s2, h, w))
    gated = add(mul(ctx, F.global_avg_pool(s)), s)
    return F.resize_to(gated, 2 * h, 2 * w)


# -- geometry block ----------------------------------------------------------------

@dataclass
class GeometryBlockParams:
    lg1: LgconvParams
    cbr1: CbrParams
    lg2: LgconvParams
    cbr2: CbrParams


def make_geometry_block(store, name, channels, rng, dtype):
    return GeometryBlockParams(
        make_lgconv(store, f"{name}.lg1", channels, rng, dtype),
        make_cbr(store, f"{name}.cbr1", channels, channels, 3, rng, dtype),
        make_lgconv(store, f"{name}.lg2", channels, rng, dtype),
        make_cbr(store, f"{name}.cbr2", channels, channels, 3, rng, dtype))


def geometry_block(g, p: GeometryBlockParams, mode):
    """Two successive residual gradient refinements of a depth feature."""
    d = cbr(add(lgconv(g, p.lg1), g), p.cbr1, mode)
    return cbr(add(lgconv(d, p.lg2), d), p.cbr2, mode)


# -- channel attention ---------------------------------------------------------------

@dataclass
class ChannelAttentionParams:
    reduce: Tensor            # (C/r, C, 1, 1)
    expand: Tensor            # (C, C/r, 1, 1)


def make_channel_attention(store, name, channels, rng, dtype, ratio=CA_RATIO):
    if channels % ratio:
        raise ValueError(f"channels {channels} not divisible by ratio {ratio}")
    mid = channels // ratio
    return ChannelAttentionParams(
        store.add_param(f"{name}.reduce", _conv_init(rng, mid, channels, 1, dtype), dtype),
        store.add_param(f"{name}.expand", _conv_init(rng, channels, mid, 1, dtype), dtype))


def channel_attention(x, p: ChannelAttentionParams):
    """Squeeze-excitation gate in (0,1), one weight per channel."""
    s = F.global_avg_pool(x)
    s = relu(F.conv2d(s, p.reduce))
    return sigmoid(F.conv2d(s, p.expand))


# -- modality weight head (CRC) --------------------------------------------------------

@dataclass
class CrcGateParams:
    k1: Tensor
    b1: Tensor
    k2: Tensor
    b2: Tensor


def make_crc_gate(store, name, channels, rng, dtype):
    return CrcGateParams(
        store.add_param(f"{name}.k1", _conv_init(rng, channels, 2 * channels, 3, dtype), dtype),
        store.add_param(f"{name}.b1", np.zeros((1, channels, 1, 1)), dtype),
        store.add_param(f"{name}.k2", _conv_init(rng, 2, channels, 3, dtype), dtype),
        store.add_param(f"{name}.b2", np.zeros((1, 2, 1, 1)), dtype))


def crc_gate(rd, p: CrcGateParams):
    """Per-pixel modality weights from stacked RGB and depth features.

    conv3x3 - relu - conv3x3 to two logits, softmax across the pair, split
    into two single-channel maps that sum to one at every location.
    """
    h = relu(_same_conv(rd, p.k1, bias=p.b1))
    logits = _same_conv(h, p.k2, bias=p.b2)
    weights = F.softmax_channels(logits, groups=2)
    w_r, w_d = split_channels(weights, (1, 1))
    return w_r, w_d


# -- prediction head ----------------------------------------------------------------

@dataclass
class PredictionHeadParams:
    trunk: CbrParams
    proj: Tensor              # (1, C, 1, 1)
    proj_bias: Tensor


def make_prediction_head(store, name, channels, rng, dtype):
    return PredictionHeadParams(
        make_cbr(store, f"{name}.trunk", channels, channels, 3, rng, dtype),
        store.add_param(f"{name}.proj", _conv_init(rng, 1, channels, 1, dtype), dtype),
        store.add_param(f"{name}.proj_bias", np.zeros((1, 1, 1, 1)), dtype))


def prediction_head(x, p: PredictionHeadParams, out_hw, mode):
    """Project to one channel, upsample to the target size, squash to (0,1)."""
    y = cbr(x, p.trunk, mode)
    y = F.conv2d(y, p.proj, bias=p.proj_bias)
    y = F.resize_to(y, out_hw[0], out_hw[1])
    return sigmoid(y)
