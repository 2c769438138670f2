"""Extractive QA: start/end classifiers over dialogue-history tokens."""

from __future__ import annotations

import numpy as np

from ..numkit import NEG_INF, Module, Tensor, ops, uniform_init


class SpanHead(Module):
    def __init__(self, d: int, rng: np.random.Generator):
        self.w_s = uniform_init(rng, d, 1, shape=(d,))
        self.w_e = uniform_init(rng, d, 1, shape=(d,))

    def log_probs(self, H_e: Tensor, allowed: np.ndarray) -> tuple[Tensor, Tensor]:
        """Masked log-distributions over start and end positions, (B, n) each."""
        B, n, d = H_e.shape
        mask = np.where(allowed, 0.0, NEG_INF).astype(H_e.dtype)
        start = (H_e @ self.w_s.reshape(d, 1)).reshape(B, n)
        end = (H_e @ self.w_e.reshape(d, 1)).reshape(B, n)
        return ops.masked_log_softmax(start, mask), ops.masked_log_softmax(end, mask)


def qa_spans(H_e: Tensor, allowed: np.ndarray, spans, params: SpanHead):
    """``(P_start, P_end, loss)``; loss is the batch mean of -(log P_s + log P_e)."""
    spans = np.asarray(spans)
    B = spans.shape[0]
    rows = np.arange(B)
    if not (allowed[rows, spans[:, 0]].all() and allowed[rows, spans[:, 1]].all()):
        raise ValueError("answer span lies outside the dialogue-history tokens")
    if np.any(spans[:, 0] > spans[:, 1]):
        raise ValueError("answer span start after end")
    lp_s, lp_e = params.log_probs(H_e, allowed)
    loss = -(lp_s[rows, spans[:, 0]] + lp_e[rows, spans[:, 1]]).sum() * (1.0 / B)
    p_s = np.where(allowed, np.exp(lp_s.data), 0.0)
    p_e = np.where(allowed, np.exp(lp_e.data), 0.0)
    return p_s, p_e, loss


def best_span(log_p_start: np.ndarray, log_p_end: np.ndarray, allowed: np.ndarray,
              max_span: int = 20) -> tuple[int, int]:
    """Highest-scoring ``(s, e)`` with ``s <= e <= s + max_span`` on allowed tokens.

    Ties go to the lowest start, then the lowest end.
    """
    n = len(log_p_start)
    s_idx, e_idx = np.indices((n, n))
    ok = (s_idx <= e_idx) & (e_idx <= s_idx + max_span) & allowed[:, None] & allowed[None, :]
    if not ok.any():
        raise ValueError("no admissible span")
    score = np.where(ok, log_p_start[:, None] + log_p_end[None, :], -np.inf)
    flat = int(np.argmax(score))
    return flat // n, flat % n
