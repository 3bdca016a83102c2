"""Hierarchical enhancement over the backbone pyramid.

THEM (texture, RGB branch) and GHEM (geometry, depth branch) share the same
top-down skeleton: each level aligns a fine backbone feature with the coarser
enhanced feature from the level above, runs the modality block on the fine
path and the semantic block on the coarse path, and fuses the two.  The
deepest enhanced feature seeds the recursion as the raw level-4 backbone
output, so a 4-level input pyramid yields 3 enhanced levels.

Ablation switches swap a block for a single same-width CBR (resolution
adapted where the block changes it), so shapes are preserved and only the
parameter census changes.
"""

from dataclasses import dataclass

from . import functional as F
from .blocks import (CbrParams, SemanticBlockParams, cbr, geometry_block,
                     make_cbr, make_geometry_block, make_semantic_block,
                     make_texture_block, semantic_block, texture_block)
from .tensor import ShapeMismatch, add


@dataclass
class EnhancementLevelParams:
    align_fine: CbrParams
    align_coarse: CbrParams
    block: object             # texture/geometry block, or CbrParams when ablated
    semantic: object          # SemanticBlockParams, or CbrParams when ablated
    fuse: CbrParams
    kind: str                 # "texture" | "geometry"


def make_enhancement_level(store, name, channels, kind, rng, dtype,
                           use_block=True, use_semantic=True, avg_mode="local3"):
    align_fine = make_cbr(store, f"{name}.align_fine", channels, channels, 3, rng, dtype)
    align_coarse = make_cbr(store, f"{name}.align_coarse", channels, channels, 3, rng, dtype)
    if not use_block:
        block = make_cbr(store, f"{name}.block_passthrough", channels, channels, 3, rng, dtype)
    elif kind == "texture":
        block = make_texture_block(store, f"{name}.texture", channels, rng, dtype, avg_mode)
    elif kind == "geometry":
        block = make_geometry_block(store, f"{name}.geometry", channels, rng, dtype)
    else:
        raise ValueError(f"unknown enhancement kind {kind!r}")
    if use_semantic:
        semantic = make_semantic_block(store, f"{name}.semantic", channels, rng, dtype)
    else:
        semantic = make_cbr(store, f"{name}.semantic_passthrough", channels, channels, 3, rng, dtype)
    fuse = make_cbr(store, f"{name}.fuse", channels, channels, 3, rng, dtype)
    return EnhancementLevelParams(align_fine, align_coarse, block, semantic, fuse, kind)


def align_pair(b_i, higher, params: EnhancementLevelParams, mode):
    """Cross-scale alignment: returns (fine, coarse).

    ``higher`` must be exactly half the spatial size of ``b_i`` with equal
    channels.  fine = CBR(b_i + up2(higher)) at b_i's size; coarse =
    CBR(higher + down2(b_i)) at higher's size.
    """
    if b_i.shape[1] != higher.shape[1]:
        raise ShapeMismatch(
            f"align_pair: channel mismatch {b_i.shape} vs {higher.shape}")
    if b_i.shape[2] != 2 * higher.shape[2] or b_i.shape[3] != 2 * higher.shape[3]:
        raise ShapeMismatch(
            f"align_pair: {higher.shape} is not half of {b_i.shape}")
    fine = cbr(add(b_i, F.bilinear_resize(higher, 2, "up")), params.align_fine, mode)
    coarse = cbr(add(higher, F.bilinear_resize(b_i, 2, "down")), params.align_coarse, mode)
    return fine, coarse


def _run_modality_block(fine, params: EnhancementLevelParams, mode):
    if isinstance(params.block, CbrParams):
        return cbr(fine, params.block, mode)
    if params.kind == "texture":
        return texture_block(fine, params.block, mode)
    return geometry_block(fine, params.block, mode)


def _run_semantic(coarse, params: EnhancementLevelParams, mode):
    if isinstance(params.semantic, SemanticBlockParams):
        return semantic_block(coarse, params.semantic, mode)
    # pass-through keeps the x2 output contract of the semantic block
    y = cbr(coarse, params.semantic, mode)
    return F.bilinear_resize(y, 2, "up")


def enhancement_level(b_i, higher, params: EnhancementLevelParams, mode):
    """One THEM/GHEM level: align, enhance both paths, fuse at b_i's size."""
    fine, coarse = align_pair(b_i, higher, params, mode)
    enhanced = _run_modality_block(fine, params, mode)
    context = _run_semantic(coarse, params, mode)
    return cbr(add(enhanced, context), params.fuse, mode)


def them_level(b_i, r_next, params, mode):
    return enhancement_level(b_i, r_next, params, mode)


def ghem_level(b_i, d_next, params, mode):
    return enhancement_level(b_i, d_next, params, mode)


def make_enhancement(store, name, channels, kind, rng, dtype,
                     use_block=True, use_semantic=True, avg_mode="local3"):
    """Per-level parameters for levels 3, 2, 1 (processed coarse to fine)."""
    return {i: make_enhancement_level(
        store, f"{name}.l{i}", channels, kind, rng, dtype,
        use_block, use_semantic, avg_mode) for i in (3, 2, 1)}


def run_enhancement(pyramid, levels, mode):
    """Top-down enhancement of a 4-level pyramid.

    ``pyramid`` is [B1, B2, B3, B4], fine to coarse; the seed for the
    recursion is B4 itself.  Returns [E1, E2, E3] at strides 4/8/16.
    """
    if len(pyramid) != 4:
        raise ShapeMismatch(f"expected a 4-level pyramid, got {len(pyramid)} levels")
    upper = pyramid[3]
    out = {}
    for i in (3, 2, 1):
        upper = enhancement_level(pyramid[i - 1], upper, levels[i], mode)
        out[i] = upper
    return [out[1], out[2], out[3]]
