"""Response selection: utterance max-pooling, utterance-level Bi-GRU, softmax
over candidates."""

from __future__ import annotations

import numpy as np

from ..numkit import NEG_INF, Module, Tensor, ops, uniform_init, zeros
from .rnn import BiRNN


def utterance_max_pool(H_e: Tensor, pool: np.ndarray, utt_valid: np.ndarray) -> Tensor:
    """Max over the member tokens of each utterance.

    ``pool`` is (B, U, n) boolean membership (content tokens only); slots of
    missing utterances come out as zeros.
    """
    bias = np.where(pool, 0.0, NEG_INF).astype(H_e.dtype)[..., None]  # (B, U, n, 1)
    B, n, d = H_e.shape
    pooled = (H_e.reshape(B, 1, n, d) + bias).max(axis=2)
    return pooled * utt_valid.astype(H_e.dtype)[..., None]


class SelectionHead(Module):
    def __init__(self, d: int, d_g: int, rng: np.random.Generator, use_gru: bool = True):
        self.use_gru = use_gru
        if use_gru:
            self.gru = BiRNN(d, d_g, rng, "gru")
            self.proj = uniform_init(rng, 2 * d_g, d)
            self.proj_b = zeros(d)
        self.w_d = uniform_init(rng, d, 1, shape=(d,))

    def dialogue_vectors(self, H_e: Tensor, pool: np.ndarray, utt_valid: np.ndarray) -> Tensor:
        """One (d,) vector per context row: (B, d)."""
        utts = utterance_max_pool(H_e, pool, utt_valid)
        if not self.use_gru:
            count = np.maximum(utt_valid.sum(axis=1, keepdims=True), 1).astype(H_e.dtype)
            return utts.sum(axis=1) * (1.0 / count)
        _, last_f, last_b = self.gru(utts, utt_valid)
        return ops.concat([last_f, last_b], axis=-1) @ self.proj + self.proj_b

    def scores(self, H_e: Tensor, pool: np.ndarray, utt_valid: np.ndarray) -> Tensor:
        H_d = self.dialogue_vectors(H_e, pool, utt_valid)
        return (H_d @ self.w_d.reshape(-1, 1)).reshape(-1)


def select_response(H_e: Tensor, pool: np.ndarray, utt_valid: np.ndarray, group_size: int,
                    labels, params: SelectionHead):
    """Candidate distribution and mean cross-entropy.

    Rows of ``H_e`` are candidate contexts grouped sample-major,
    ``group_size`` per sample. Returns ``(P_D (S, C) array, loss)``.
    """
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= group_size):
        raise ValueError(f"label out of range for {group_size} candidates: {labels}")
    logits = params.scores(H_e, pool, utt_valid).reshape(-1, group_size)
    logp = ops.masked_log_softmax(logits)
    S = logits.shape[0]
    loss = -logp[np.arange(S), labels].sum() * (1.0 / S)
    return np.exp(logp.data), loss
