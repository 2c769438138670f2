"""Bidirectional decoupling layers and mixture-of-experts fusion.

Three parameter-independent masked transformer layers re-read the encoder
output ``H`` through the f2c, c2c and p2c masks. A per-token, per-feature
softmax gate over the three channels, driven by heuristic matching against
``H``, fuses them into ``H_e``.
"""

from __future__ import annotations

import numpy as np

from .encoder import Encoder, TransformerLayer
from .masking import CHANNELS, BatchMasks, DecouplingMasks, stack_masks
from .numkit import Module, Tensor, ops, uniform_init, zeros


def _batch_masks(masks, n: int, dtype) -> BatchMasks:
    if isinstance(masks, BatchMasks):
        return masks
    if isinstance(masks, DecouplingMasks):
        masks = [masks]
    return stack_masks(masks, n, dtype)


class DecouplingLayers(Module):
    """One masked transformer layer per channel, no shared weights."""

    def __init__(self, d: int, n_heads: int, d_ff: int, rng: np.random.Generator, dropout: float = 0.0):
        self.f2c = TransformerLayer(d, n_heads, d_ff, rng, dropout)
        self.c2c = TransformerLayer(d, n_heads, d_ff, rng, dropout)
        self.p2c = TransformerLayer(d, n_heads, d_ff, rng, dropout)

    def layer(self, name: str) -> TransformerLayer:
        return getattr(self, name)

    def __call__(self, H: Tensor, masks, return_weights: bool = False):
        return decouple(H, masks, self, return_weights=return_weights)


def decouple(H: Tensor, masks, params: DecouplingLayers, return_weights: bool = False):
    """Run the three channel layers over ``H``.

    Rows that have no admissible key in a channel come out as exact zeros in
    that channel. Returns ``(H_f2c, H_c2c, H_p2c)``, plus per-channel
    attention weights when ``return_weights`` is set.
    """
    squeeze = H.ndim == 2
    if squeeze:
        H = H.reshape(1, *H.shape)
    bm = _batch_masks(masks, H.shape[1], H.dtype)
    outs, weights = [], {}
    for c, name in enumerate(CHANNELS):
        out, probs = params.layer(name)(H, bm.channels[:, c], return_weights=True)
        outs.append(out * bm.valid[:, :, c:c + 1])
        weights[name] = probs
    if squeeze:
        outs = [o.reshape(o.shape[1:]) for o in outs]
    return (tuple(outs), weights) if return_weights else tuple(outs)


def heuristic_match(X: Tensor, Y: Tensor) -> Tensor:
    """``[X; Y; X - Y; X * Y]`` along the feature axis."""
    if X.shape != Y.shape:
        raise ValueError(f"heuristic_match shape mismatch: {X.shape} vs {Y.shape}")
    return ops.concat([X, Y, X - Y, X * Y], axis=-1)


class MoEFusion(Module):
    """Expert scorers ``W_k`` (4d x d) and the gate, stored as one 3d x d
    matrix per expert (the 3d x d x 3 gating tensor split on its last axis)."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.w_f, self.b_f = uniform_init(rng, 4 * d, d), zeros(d)
        self.w_c, self.b_c = uniform_init(rng, 4 * d, d), zeros(d)
        self.w_p, self.b_p = uniform_init(rng, 4 * d, d), zeros(d)
        self.g_f = uniform_init(rng, 3 * d, d)
        self.g_c = uniform_init(rng, 3 * d, d)
        self.g_p = uniform_init(rng, 3 * d, d)

    def __call__(self, H, H_f2c, H_c2c, H_p2c, fusion_mask, return_gates: bool = False):
        return moe_fuse(H, H_f2c, H_c2c, H_p2c, fusion_mask, self, return_gates=return_gates)


def moe_fuse(H, H_f2c, H_c2c, H_p2c, fusion_mask, params: MoEFusion, return_gates: bool = False):
    """Gate-weighted sum of the channels.

    ``fusion_mask`` is (..., n, 3) additive; a token whose channels are all
    masked (padding) gets a zero gate row and therefore a zero ``H_e`` row.
    With ``return_gates`` the (..., n, d, 3) gate tensor is returned too.
    """
    p = params
    s_f = ops.relu(heuristic_match(H, H_f2c) @ p.w_f + p.b_f)
    s_c = ops.relu(heuristic_match(H, H_c2c) @ p.w_c + p.b_c)
    s_p = ops.relu(heuristic_match(H, H_p2c) @ p.w_p + p.b_p)
    scores = ops.concat([s_f, s_c, s_p], axis=-1)
    logits = ops.stack([scores @ p.g_f, scores @ p.g_c, scores @ p.g_p], axis=-1)
    fusion = np.asarray(fusion_mask, dtype=H.dtype)[..., None, :]
    gates = ops.masked_softmax(logits, fusion)
    experts = ops.stack([H_f2c, H_c2c, H_p2c], axis=-1)
    H_e = (gates * experts).sum(axis=-1)
    return (H_e, gates) if return_gates else H_e


def mean_fuse(H_f2c, H_c2c, H_p2c, valid) -> Tensor:
    """Average of the valid channels (the no-MoE ablation).

    ``valid`` is (..., n, 3) with 1 for valid channels; tokens with no valid
    channel get zeros.
    """
    valid = np.asarray(valid, dtype=H_c2c.dtype)
    count = np.maximum(valid.sum(axis=-1, keepdims=True), 1.0)
    experts = ops.stack([H_f2c, H_c2c, H_p2c], axis=-1)
    return (experts * (valid / count)[..., None, :]).sum(axis=-1)


def init_copy_last_encoder_layer(encoder: Encoder, layers: DecouplingLayers) -> DecouplingLayers:
    """Overwrite all three channel layers with copies of the last encoder layer."""
    source = encoder.layers[-1].state_dict()
    for name in CHANNELS:
        target = layers.layer(name)
        shapes = {k: v.shape for k, v in target.state_dict().items()}
        if shapes != {k: v.shape for k, v in source.items()}:
            raise ValueError(f"{name} layer does not match the encoder layer's shapes")
        target.load_state_dict({k: v.copy() for k, v in source.items()})
    return layers
