"""Adaptive dynamic fusion of enhanced RGB and depth pyramids.

Each level first exchanges global guidance between the modalities (residual
gating by a 1x1 conv of the other stream's global max pool), then blends the
two guided features with per-pixel convex weights from the modality-weight
head, and finally refines the blend with channel attention plus a cross-scale
residual from the coarser fused level.  The coarsest level has no coarser
neighbour, so its cross-scale term is dropped.

The ablated variant replaces the whole module with a single CBR over the
channel-stacked pair (convolution-based fusion).
"""

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .blocks import (CbrParams, ChannelAttentionParams, CrcGateParams,
                     _conv_init, cbr, channel_attention, crc_gate, make_cbr,
                     make_channel_attention, make_crc_gate)
from .params import ParamStore
from .tensor import ShapeMismatch, Tensor, add, concat_channels, mul


@dataclass
class AdfmParams:
    guide_rgb: Tensor         # 1x1, modulates RGB by depth's global response
    guide_rgb_bias: Tensor
    guide_depth: Tensor
    guide_depth_bias: Tensor
    crc: CrcGateParams
    ref1: CbrParams
    ref2: CbrParams
    ca: ChannelAttentionParams


@dataclass
class ConvFusionParams:
    """Ablation stand-in: CBR over the concatenated pair."""
    fuse: CbrParams


def make_adfm(store: ParamStore, name, channels, rng, dtype):
    return AdfmParams(
        store.add_param(f"{name}.guide_rgb", _conv_init(rng, channels, channels, 1, dtype), dtype),
        store.add_param(f"{name}.guide_rgb_bias", np.zeros((1, channels, 1, 1)), dtype),
        store.add_param(f"{name}.guide_depth", _conv_init(rng, channels, channels, 1, dtype), dtype),
        store.add_param(f"{name}.guide_depth_bias", np.zeros((1, channels, 1, 1)), dtype),
        make_crc_gate(store, f"{name}.crc", channels, rng, dtype),
        make_cbr(store, f"{name}.ref1", channels, channels, 3, rng, dtype),
        make_cbr(store, f"{name}.ref2", channels, channels, 3, rng, dtype),
        make_channel_attention(store, f"{name}.ca", channels, rng, dtype))


def make_conv_fusion(store, name, channels, rng, dtype):
    return ConvFusionParams(make_cbr(store, f"{name}.fuse", 2 * channels, channels, 3, rng, dtype))


def adfm_fuse(r_i, d_i, p: AdfmParams):
    """Cross-modal guidance plus spatially adaptive convex blending.

    The output lies pointwise between the two guided features, and the two
    weight maps sum to one at every pixel.
    """
    if r_i.shape != d_i.shape:
        raise ShapeMismatch(f"adfm_fuse: {r_i.shape} vs {d_i.shape}")
    g_r = F.conv2d(F.global_max_pool(d_i), p.guide_rgb, bias=p.guide_rgb_bias)
    g_d = F.conv2d(F.global_max_pool(r_i), p.guide_depth, bias=p.guide_depth_bias)
    r_hat = add(mul(r_i, g_r), r_i)
    d_hat = add(mul(d_i, g_d), d_i)
    w_r, w_d = crc_gate(concat_channels([r_hat, d_hat]), p.crc)
    return add(mul(w_r, r_hat), mul(w_d, d_hat))


def adfm_refine(f_m, f_next, p: AdfmParams, mode):
    """Channel-reweighted refinement with an optional cross-scale residual.

    ``f_next``, when given, is the coarser fused feature at half the spatial
    size; it is upsampled and added alongside the refined and raw paths.
    """
    f_ref = cbr(cbr(f_m, p.ref1, mode), p.ref2, mode)
    w_c = channel_attention(f_ref, p.ca)
    f_v = mul(f_ref, w_c)
    out = add(f_v, f_m)
    if f_next is not None:
        if (f_m.shape[2] != 2 * f_next.shape[2]
                or f_m.shape[3] != 2 * f_next.shape[3]):
            raise ShapeMismatch(
                f"adfm_refine: {f_next.shape} is not half of {f_m.shape}")
        out = add(out, F.bilinear_resize(f_next, 2, "up"))
    return out


def adfm_level(r_i, d_i, f_next, p, mode):
    if isinstance(p, ConvFusionParams):
        return cbr(concat_channels([r_i, d_i]), p.fuse, mode)
    return adfm_refine(adfm_fuse(r_i, d_i, p), f_next, p, mode)


def make_fusion(store, name, channels, rng, dtype, use_adfm=True):
    maker = make_adfm if use_adfm else make_conv_fusion
    return {i: maker(store, f"{name}.l{i}", channels, rng, dtype) for i in (3, 2, 1)}


def run_adfm(rgb_pyr, depth_pyr, levels, mode):
    """Fuse aligned 3-level pyramids coarse to fine; returns [F1, F2, F3]."""
    if len(rgb_pyr) != 3 or len(depth_pyr) != 3:
        raise ShapeMismatch("run_adfm expects two 3-level pyramids")
    f_next = None
    out = {}
    for i in (3, 2, 1):
        use_next = f_next if isinstance(levels[i], AdfmParams) else None
        f_next = adfm_level(rgb_pyr[i - 1], depth_pyr[i - 1], use_next, levels[i], mode)
        out[i] = f_next
    return [out[1], out[2], out[3]]
