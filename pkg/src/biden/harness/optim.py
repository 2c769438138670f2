"""AdamW with decoupled weight decay and a linear warmup/decay schedule."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..numkit import Gradients, Tensor


def linear_schedule(step: int, total_steps: int, peak_lr: float, warmup_fraction: float = 0.01) -> float:
    """Learning rate at ``step``: 0 -> peak over the warmup steps, then linearly to 0.

    The warmup length is ``ceil(warmup_fraction * total_steps)`` (at least 1).
    """
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    warmup = max(1, math.ceil(warmup_fraction * total_steps))
    if step < warmup:
        return peak_lr * step / warmup
    remaining = total_steps - warmup
    if remaining <= 0:
        return 0.0
    return peak_lr * max(0.0, (total_steps - step) / remaining)


class AdamW:
    """Adam moments with weight decay applied directly to the weights.

    ``p <- p - lr * wd * p`` precedes the bias-corrected Adam step, as in
    the decoupled-decay formulation.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Gradients, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = grads.get(p)
            if g is None:
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if lr == 0.0:
                continue
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
