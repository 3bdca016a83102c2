"""Finite-difference verification suite covering every block, the losses,
and the assembled network.

Block checks run in train mode on batch-2 inputs (exercising the batch-stat
backward of the normalization); the full-network check runs in eval mode on a
single 64x64 instance, which is deeper, so it carries a looser tolerance.
Running statistics are frozen during probing, so repeated evaluations are
pure.
"""

import numpy as np

from . import blocks, enhancement, functional as F, fusion, losses
from .gradcheck import grad_check
from .network import MheNet, NetworkConfig
from .params import ParamStore
from .tensor import Tensor

BLOCK_TOL = 1e-4
NET_TOL = 1e-3


def _rand(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _with_params(store, extra):
    return list(extra) + [t for _, t in store.learnable()]


def _check(name, fn, wrt, tol, seed, max_coords=48):
    return grad_check(fn, wrt, tol=tol, max_coords=max_coords, seed=seed, name=name)


def check_cbr(rng, tol, c=4):
    store = ParamStore()
    p = blocks.make_cbr(store, "cbr", c, c, 3, rng, np.float64)
    x = _rand(rng, (2, c, 6, 6))
    return _check("cbr", lambda: blocks.cbr(x, p, "train"),
                  _with_params(store, [x]), tol, seed=11)


def check_lgconv(rng, tol, c=3):
    store = ParamStore()
    p = blocks.make_lgconv(store, "lg", c, rng, np.float64)
    x = _rand(rng, (2, c, 6, 6))
    return _check("lgconv", lambda: blocks.lgconv(x, p),
                  _with_params(store, [x]), tol, seed=12)


def check_texture_block(rng, tol, c=4):
    store = ParamStore()
    p = blocks.make_texture_block(store, "tex", c, rng, np.float64)
    x = _rand(rng, (2, c, 6, 6))
    return _check("texture_block", lambda: blocks.texture_block(x, p, "train"),
                  _with_params(store, [x]), tol, seed=13)


def check_semantic_block(rng, tol, c=4):
    store = ParamStore()
    p = blocks.make_semantic_block(store, "sem", c, rng, np.float64)
    x = _rand(rng, (2, c, 8, 8))
    return _check("semantic_block", lambda: blocks.semantic_block(x, p, "train"),
                  _with_params(store, [x]), tol, seed=14)


def check_geometry_block(rng, tol, c=4):
    store = ParamStore()
    p = blocks.make_geometry_block(store, "geo", c, rng, np.float64)
    x = _rand(rng, (2, c, 6, 6))
    return _check("geometry_block", lambda: blocks.geometry_block(x, p, "train"),
                  _with_params(store, [x]), tol, seed=15)


def check_channel_attention(rng, tol, c=8):
    store = ParamStore()
    p = blocks.make_channel_attention(store, "ca", c, rng, np.float64)
    x = _rand(rng, (2, c, 5, 5))
    return _check("channel_attention", lambda: blocks.channel_attention(x, p),
                  _with_params(store, [x]), tol, seed=16)


def check_crc_gate(rng, tol, c=4):
    store = ParamStore()
    p = blocks.make_crc_gate(store, "crc", c, rng, np.float64)
    x = _rand(rng, (2, 2 * c, 6, 6))

    def fn():
        w_r, w_d = blocks.crc_gate(x, p)
        return w_r - w_d          # exercise both softmax outputs

    return _check("crc_gate", fn, _with_params(store, [x]), tol, seed=17)


def check_align_pair(rng, tol, c=4):
    store = ParamStore()
    level = enhancement.make_enhancement_level(store, "lvl", c, "texture", rng, np.float64)
    fine = _rand(rng, (2, c, 8, 8))
    coarse = _rand(rng, (2, c, 4, 4))
    align_params = [level.align_fine.kernel, level.align_fine.gamma,
                    level.align_fine.beta, level.align_coarse.kernel,
                    level.align_coarse.gamma, level.align_coarse.beta]

    def fn():
        a, b = enhancement.align_pair(fine, coarse, level, "train")
        return a + F.bilinear_resize(b, 2, "up")

    return _check("align_pair", fn, [fine, coarse] + align_params, tol, seed=18)


def check_adfm(rng, tol, c=4):
    store = ParamStore()
    p = fusion.make_adfm(store, "adfm", c, rng, np.float64)
    r = _rand(rng, (2, c, 6, 6))
    d = _rand(rng, (2, c, 6, 6))
    nxt = _rand(rng, (2, c, 3, 3))

    def fn():
        return fusion.adfm_refine(fusion.adfm_fuse(r, d, p), nxt, p, "train")

    return _check("adfm", fn, _with_params(store, [r, d, nxt]), tol, seed=19)


def check_prediction_head(rng, tol, c=4):
    store = ParamStore()
    p = blocks.make_prediction_head(store, "head", c, rng, np.float64)
    x = _rand(rng, (2, c, 4, 4))
    return _check("prediction_head",
                  lambda: blocks.prediction_head(x, p, (16, 16), "train"),
                  _with_params(store, [x]), tol, seed=20)


def check_bce_loss(rng, tol):
    m = Tensor(rng.uniform(0.05, 0.95, size=(1, 1, 6, 6)), requires_grad=True)
    g = Tensor((rng.random((1, 1, 6, 6)) > 0.5).astype(np.float64))
    return _check("bce_loss", lambda: losses.bce_loss(m, g), [m], tol, seed=21)


def check_iou_loss(rng, tol):
    m = Tensor(rng.uniform(0.05, 0.95, size=(1, 1, 6, 6)), requires_grad=True)
    g = Tensor((rng.random((1, 1, 6, 6)) > 0.5).astype(np.float64))
    return _check("iou_loss", lambda: losses.iou_loss(m, g), [m], tol, seed=22)


def check_full_network(rng, tol, channels=8, size=64):
    net = MheNet(NetworkConfig(input_size=(size, size), channels=channels), seed=7)
    rgb = Tensor(rng.uniform(0.0, 1.0, size=(1, 3, size, size)), requires_grad=True)
    depth = Tensor(rng.uniform(0.0, 1.0, size=(1, 1, size, size)), requires_grad=True)
    learnable = [t for _, t in net.store.learnable()]
    sampled = [rgb, depth] + learnable[::max(len(learnable) // 10, 1)][:10]

    def fn():
        out = net.forward(rgb, depth, mode="eval")
        return out.m1 + out.m2 + out.m3

    return grad_check(fn, sampled, tol=tol, max_coords=10, seed=23,
                      name="full_network")


BLOCK_CHECKS = (
    check_cbr,
    check_lgconv,
    check_texture_block,
    check_semantic_block,
    check_geometry_block,
    check_channel_attention,
    check_crc_gate,
    check_align_pair,
    check_adfm,
    check_prediction_head,
    check_bce_loss,
    check_iou_loss,
)


def run_gradient_suite(block_tol=BLOCK_TOL, net_tol=NET_TOL, seed=0,
                       include_network=True):
    """Run every check; returns the list of GradCheckResult."""
    results = []
    for check in BLOCK_CHECKS:
        rng = np.random.default_rng(seed + len(results))
        results.append(check(rng, block_tol))
    if include_network:
        results.append(check_full_network(np.random.default_rng(seed + 99), net_tol))
    return results
