"""GRU/LSTM cells and a masked bidirectional runner built on numkit ops."""

from __future__ import annotations

import numpy as np

from ..numkit import Module, Tensor, ops, uniform_init, zeros


class GRUCell(Module):
    """``z, r = sigmoid(.)``; ``n = tanh(x W_n + (r * h) U_n + b_n)``;
    ``h' = (1 - z) * n + z * h``."""

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator):
        self.d_h = d_h
        self.w_x = uniform_init(rng, d_in, 3 * d_h)
        self.w_zr = uniform_init(rng, d_h, 2 * d_h)
        self.w_n = uniform_init(rng, d_h, d_h)
        self.b = zeros(3 * d_h)

    def input_projection(self, x: Tensor) -> Tensor:
        return x @ self.w_x + self.b

    def init_state(self, batch: int, dtype):
        return Tensor(np.zeros((batch, self.d_h), dtype=dtype))

    def step(self, xp: Tensor, state):
        h = state
        d = self.d_h
        zr = ops.sigmoid(xp[:, : 2 * d] + h @ self.w_zr)
        z, r = zr[:, :d], zr[:, d:]
        n = ops.tanh(xp[:, 2 * d:] + (r * h) @ self.w_n)
        h_new = (1.0 - z) * n + z * h
        return h_new, h_new

    @staticmethod
    def blend(new, old, keep: np.ndarray):
        return new * keep + old * (1.0 - keep)


class LSTMCell(Module):
    """Standard LSTM with input, forget, cell and output gates."""

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator):
        self.d_h = d_h
        self.w_x = uniform_init(rng, d_in, 4 * d_h)
        self.w_h = uniform_init(rng, d_h, 4 * d_h)
        self.b = zeros(4 * d_h)

    def input_projection(self, x: Tensor) -> Tensor:
        return x @ self.w_x + self.b

    def init_state(self, batch: int, dtype):
        zero = Tensor(np.zeros((batch, self.d_h), dtype=dtype))
        return (zero, zero)

    def step(self, xp: Tensor, state):
        h, c = state
        d = self.d_h
        pre = xp + h @ self.w_h
        i = ops.sigmoid(pre[:, :d])
        f = ops.sigmoid(pre[:, d: 2 * d])
        g = ops.tanh(pre[:, 2 * d: 3 * d])
        o = ops.sigmoid(pre[:, 3 * d:])
        c_new = f * c + i * g
        h_new = o * ops.tanh(c_new)
        return h_new, (h_new, c_new)

    @staticmethod
    def blend(new, old, keep: np.ndarray):
        return tuple(a * keep + b * (1.0 - keep) for a, b in zip(new, old))


def run(cell, x: Tensor, valid: np.ndarray | None = None, reverse: bool = False):
    """Unroll ``cell`` over axis 1 of ``x`` (B, T, d_in).

    Steps where ``valid`` (B, T) is false leave the state untouched, so a
    reversed run starts at each row's last valid step. Returns the stacked
    per-step outputs (B, T, d_h), zero at invalid steps, and the final hidden
    state (B, d_h).
    """
    B, T, _ = x.shape
    if valid is None:
        valid = np.ones((B, T), dtype=bool)
    keep = valid.astype(x.dtype)[:, :, None]
    xp = cell.input_projection(x)
    state = cell.init_state(B, x.dtype)
    outs = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        h_new, new_state = cell.step(xp[:, t], state)
        state = cell.blend(new_state, state, keep[:, t])
        outs[t] = h_new * keep[:, t]
    final = state[0] if isinstance(state, tuple) else state
    return ops.stack(outs, axis=1), final


class BiRNN(Module):
    """Forward and backward cells whose per-step outputs are concatenated."""

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator, kind: str = "gru"):
        cell = {"gru": GRUCell, "lstm": LSTMCell}[kind]
        self.kind = kind
        self.fwd = cell(d_in, d_h, rng)
        self.bwd = cell(d_in, d_h, rng)

    def __call__(self, x: Tensor, valid: np.ndarray | None = None):
        """Returns ``(outputs (B, T, 2 d_h), final_fwd, final_bwd)``."""
        out_f, last_f = run(self.fwd, x, valid)
        out_b, last_b = run(self.bwd, x, valid, reverse=True)
        return ops.concat([out_f, out_b], axis=-1), last_f, last_b


def bi_rnn_baseline(H: Tensor, valid: np.ndarray, params: BiRNN) -> Tensor:
    """Token-level bidirectional recurrence over the encoder output."""
    out, _, _ = params(H, valid)
    return out
