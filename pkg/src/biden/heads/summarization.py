"""Autoregressive decoder over the fused dialogue representation."""

from __future__ import annotations

import numpy as np

from ..encoder import FeedForward, MultiHeadAttention
from ..masking import build_causal_mask
from ..numkit import Module, Tensor, ops, ones, parameter, zeros
from ..numkit.ops import embedding as _lookup


class DecoderLayer(Module):
    """Post-norm: causal self-attention, cross-attention over ``H_e``, FFN."""

    def __init__(self, d: int, n_heads: int, d_ff: int, rng: np.random.Generator, eps: float = 1e-5):
        self.self_attn = MultiHeadAttention(d, n_heads, rng)
        self.cross_attn = MultiHeadAttention(d, n_heads, rng)
        self.ffn = FeedForward(d, d_ff, rng)
        self.ln1_g, self.ln1_b = ones(d), zeros(d)
        self.ln2_g, self.ln2_b = ones(d), zeros(d)
        self.ln3_g, self.ln3_b = ones(d), zeros(d)
        self._eps = eps

    def __call__(self, x: Tensor, memory: Tensor, self_mask, memory_mask) -> Tensor:
        h = ops.layer_norm(self.self_attn(x, self_mask) + x, self.ln1_g, self.ln1_b, self._eps)
        h = ops.layer_norm(self.cross_attn(h, memory_mask, kv=memory) + h, self.ln2_g, self.ln2_b, self._eps)
        return ops.layer_norm(self.ffn(h) + h, self.ln3_g, self.ln3_b, self._eps)


class Decoder(Module):
    """The output projection is the (shared) token embedding table, transposed."""

    def __init__(self, token_table: Tensor, max_target_len: int, d: int, n_heads: int,
                 n_layers: int, d_ff: int, rng: np.random.Generator):
        self.token = token_table
        self.position = parameter(rng.normal(0.0, d ** -0.5, size=(max_target_len, d)))
        self.layers = [DecoderLayer(d, n_heads, d_ff, rng) for _ in range(n_layers)]

    def logits(self, target_in: np.ndarray, memory: Tensor, memory_key_mask: np.ndarray) -> Tensor:
        """Next-token logits (B, m, |V|) for teacher-forced inputs (B, m)."""
        B, m = target_in.shape
        if m > self.position.shape[0]:
            raise ValueError(f"target length {m} exceeds decoder table {self.position.shape[0]}")
        x = _lookup(self.token, target_in) + _lookup(self.position, np.arange(m))
        causal = build_causal_mask(m).astype(memory.dtype)
        for layer in self.layers:
            x = layer(x, memory, causal, memory_key_mask)
        return x @ self.token.T


def summarize_loss(H_e: Tensor, memory_key_mask: np.ndarray, target_in: np.ndarray,
                   target_out: np.ndarray, target_mask: np.ndarray, params: Decoder) -> Tensor:
    """Mean per-token negative log-likelihood of ``target_out`` under teacher forcing."""
    if target_mask.sum() == 0:
        raise ValueError("empty target")
    logits = params.logits(target_in, H_e, memory_key_mask)
    logp = ops.masked_log_softmax(logits)
    B, m = target_in.shape
    b, t = np.nonzero(target_mask)
    picked = logp[b, t, target_out[b, t]]
    return -picked.sum() * (1.0 / len(b))


def greedy_decode(H_e: Tensor, memory_key_mask: np.ndarray, params: Decoder, bos_id: int,
                  eos_id: int, max_len: int = 32) -> list[list[int]]:
    """Argmax decoding per row; stops at ``[EOS]`` (not included) or ``max_len`` tokens."""
    B = H_e.shape[0]
    max_len = min(max_len, params.position.shape[0])
    seqs = np.full((B, 1), bos_id, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    for _ in range(max_len):
        nxt = np.argmax(params.logits(seqs, H_e, memory_key_mask).data[:, -1], axis=-1)
        nxt = np.where(done, eos_id, nxt)
        seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
        done |= nxt == eos_id
        if done.all() or seqs.shape[1] > max_len:
            break
    out = []
    for row in seqs[:, 1:]:
        row = list(row)
        out.append(row[: row.index(eos_id)] if eos_id in row else row[:max_len])
    return out
