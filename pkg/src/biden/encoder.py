"""Embeddings and post-norm transformer layers.

All layers take ``(B, n, d)`` activations (a bare ``(n, d)`` input is
treated as a batch of one) and an additive mask broadcastable to
``(B, n, m)``.
"""

from __future__ import annotations

import math

import numpy as np

from .numkit import Module, Tensor, ops, parameter, uniform_init, zeros, ones
from .numkit.ops import embedding as _lookup


def _as_4d_mask(mask, dtype) -> np.ndarray:
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=dtype)
    if mask.ndim == 2:
        return mask[None, None]
    if mask.ndim == 3:
        return mask[:, None]
    return mask


class MultiHeadAttention(Module):
    """Scaled dot-product attention with ``h`` heads over column blocks of
    ``w_q``/``w_k``/``w_v`` (head i owns columns ``i*d_k:(i+1)*d_k``)."""

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        if d % n_heads:
            raise ValueError(f"hidden size {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.w_q = uniform_init(rng, d, d)
        self.w_k = uniform_init(rng, d, d)
        self.w_v = uniform_init(rng, d, d)
        self.w_o = uniform_init(rng, d, d)

    def __call__(self, x: Tensor, mask, kv: Tensor | None = None, return_weights: bool = False):
        kv = x if kv is None else kv
        B, n, d = x.shape
        m = kv.shape[1]
        h = self.n_heads
        dk = d // h
        q = (x @ self.w_q).reshape(B, n, h, dk).transpose(0, 2, 1, 3) * (1.0 / math.sqrt(dk))
        k = (kv @ self.w_k).reshape(B, m, h, dk).transpose(0, 2, 3, 1)
        v = (kv @ self.w_v).reshape(B, m, h, dk).transpose(0, 2, 1, 3)
        probs = ops.masked_softmax(q @ k, _as_4d_mask(mask, x.dtype))
        ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B, n, d)
        out = ctx @ self.w_o
        return (out, probs) if return_weights else out


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int, rng: np.random.Generator):
        self.w1 = uniform_init(rng, d, d_ff)
        self.b1 = zeros(d_ff)
        self.w2 = uniform_init(rng, d_ff, d)
        self.b2 = zeros(d)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(x @ self.w1 + self.b1) @ self.w2 + self.b2


class TransformerLayer(Module):
    """``h = LN(MHSA(x) + x); out = LN(FFN(h) + h)``."""

    def __init__(self, d: int, n_heads: int, d_ff: int, rng: np.random.Generator,
                 dropout: float = 0.0, eps: float = 1e-5):
        self.attn = MultiHeadAttention(d, n_heads, rng)
        self.ffn = FeedForward(d, d_ff, rng)
        self.ln1_g, self.ln1_b = ones(d), zeros(d)
        self.ln2_g, self.ln2_b = ones(d), zeros(d)
        self._dropout = dropout
        self._eps = eps
        self._rng = None

    def __call__(self, x: Tensor, mask, return_weights: bool = False):
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        a, probs = self.attn(x, mask, return_weights=True)
        a = ops.dropout(a, self._dropout, self._rng, self.training)
        h = ops.layer_norm(a + x, self.ln1_g, self.ln1_b, self._eps)
        f = ops.dropout(self.ffn(h), self._dropout, self._rng, self.training)
        out = ops.layer_norm(f + h, self.ln2_g, self.ln2_b, self._eps)
        if squeeze:
            out = out.reshape(out.shape[1:])
        return (out, probs) if return_weights else out


class Embeddings(Module):
    """Sum of token, position and segment tables."""

    def __init__(self, vocab_size: int, max_len: int, d: int, rng: np.random.Generator,
                 n_segments: int = 2):
        scale = d ** -0.5
        self.token = parameter(rng.normal(0.0, scale, size=(vocab_size, d)))
        self.position = parameter(rng.normal(0.0, scale, size=(max_len, d)))
        self.segment = parameter(rng.normal(0.0, scale, size=(n_segments, d)))

    def __call__(self, token_ids, segment_ids, position_ids) -> Tensor:
        return (_lookup(self.token, token_ids)
                + _lookup(self.position, position_ids)
                + _lookup(self.segment, segment_ids))


class Encoder(Module):
    def __init__(self, vocab_size: int, max_len: int, d: int, n_heads: int, n_layers: int,
                 d_ff: int, rng: np.random.Generator, dropout: float = 0.0):
        if n_layers < 1:
            raise ValueError("encoder needs at least one layer")
        self.embeddings = Embeddings(vocab_size, max_len, d, rng)
        self.layers = [TransformerLayer(d, n_heads, d_ff, rng, dropout) for _ in range(n_layers)]

    def __call__(self, E: Tensor, mask=None) -> Tensor:
        return encode(E, self, mask)


def embed(token_ids, segment_ids, position_ids, params: Embeddings) -> Tensor:
    return params(token_ids, segment_ids, position_ids)


def multi_head_attention(x: Tensor, mask, params: MultiHeadAttention) -> Tensor:
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    out = params(x, mask)
    return out.reshape(out.shape[1:]) if squeeze else out


def transformer_layer(x: Tensor, mask, params: TransformerLayer) -> Tensor:
    return params(x, mask)


def encode(E: Tensor, params: Encoder, mask=None) -> Tensor:
    """Apply every encoder layer in order; ``mask=None`` means full attention."""
    if mask is None:
        mask = np.zeros((E.shape[-2], E.shape[-2]))
    H = E
    for layer in params.layers:
        H = layer(H, mask)
    return H
