"""Utterance-level attention masks for the decoupling channels.

For a token-to-utterance map ``I``:

* future-to-current (f2c): token i may attend j iff ``I[i] < I[j]``
* current-to-current (c2c): iff ``I[i] == I[j]``
* past-to-current (p2c): iff ``I[i] > I[j]``

Masks are additive (0 or ``NEG_INF``). A row with no admissible key marks the
token as invalid in that channel; the fusion mask ``fusion`` (n x 3, channel
order f2c, c2c, p2c) excludes invalid channels from the expert gate.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numkit import NEG_INF

CHANNELS = ("f2c", "c2c", "p2c")

_cache: dict[tuple[int, ...], "DecouplingMasks"] = {}
_cache_lock = threading.Lock()
_CACHE_LIMIT = 50_000


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _additive(allowed: np.ndarray) -> np.ndarray:
    return np.where(allowed, 0.0, NEG_INF)


@dataclass(frozen=True)
class DecouplingMasks:
    f2c: np.ndarray
    c2c: np.ndarray
    p2c: np.ndarray
    valid_f2c: np.ndarray
    valid_c2c: np.ndarray
    valid_p2c: np.ndarray
    fusion: np.ndarray
    ablation: bool = False

    @property
    def n(self) -> int:
        return self.c2c.shape[0]

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def validity(self) -> np.ndarray:
        """Boolean n x 3 array, columns in channel order."""
        return np.stack([self.valid_f2c, self.valid_c2c, self.valid_p2c], axis=1)


def _check_index_map(I: np.ndarray) -> None:
    if I.ndim != 1 or I.size == 0:
        raise ValueError("utterance index map must be a non-empty 1-d sequence")
    if I[0] != 0 or np.any(np.diff(I) < 0) or np.any(np.diff(I) > 1):
        raise ValueError("utterance index map must be non-decreasing and contiguous from 0")


def build_decoupling_masks(I: Sequence[int], n: int | None = None) -> DecouplingMasks:
    """Masks for one unpadded sequence; results are cached by ``I``."""
    key = tuple(int(i) for i in I)
    if n is not None and n != len(key):
        raise ValueError(f"n={n} does not match len(I)={len(key)}")
    hit = _cache.get(key)
    if hit is not None:
        return hit
    idx = np.asarray(key, dtype=np.int64)
    _check_index_map(idx)
    row, col = idx[:, None], idx[None, :]
    allowed = {"f2c": row < col, "c2c": row == col, "p2c": row > col}
    valid = {k: a.any(axis=1) for k, a in allowed.items()}
    fusion = _additive(np.stack([valid[k] for k in CHANNELS], axis=1))
    masks = DecouplingMasks(
        **{k: _frozen(_additive(a)) for k, a in allowed.items()},
        **{f"valid_{k}": _frozen(v) for k, v in valid.items()},
        fusion=_frozen(fusion),
    )
    with _cache_lock:
        if len(_cache) >= _CACHE_LIMIT:
            _cache.clear()
        return _cache.setdefault(key, masks)


def zero_masks(n: int) -> DecouplingMasks:
    """Fully-connected masks for the all-zero-mask ablation.

    Every channel is valid for every token, so the three channels no longer
    partition token pairs; ``ablation`` is set to say so.
    """
    zero = _frozen(np.zeros((n, n)))
    ones = _frozen(np.ones(n, dtype=bool))
    return DecouplingMasks(zero, zero, zero, ones, ones, ones, _frozen(np.zeros((n, 3))), ablation=True)


def build_causal_mask(m: int) -> np.ndarray:
    if m < 1:
        raise ValueError(f"causal mask size must be >= 1, got {m}")
    return _additive(np.tril(np.ones((m, m), dtype=bool)))


def partition_holds(masks: DecouplingMasks) -> bool:
    """True iff every (i, j) pair is admitted by exactly one channel."""
    admitted = sum((masks.channel(k) == 0).astype(int) for k in CHANNELS)
    return bool(np.all(admitted == 1))


def key_padding_mask(lengths: Sequence[int], n: int) -> np.ndarray:
    """(B, 1, n) additive mask hiding pad keys beyond each length."""
    lengths = np.asarray(lengths)
    keep = np.arange(n)[None, :] < lengths[:, None]
    return _additive(keep)[:, None, :]


@dataclass(frozen=True)
class BatchMasks:
    """Per-channel masks padded to a common length.

    ``channels``: (B, 3, n, n); ``valid``: (B, n, 3) float 0/1; ``fusion``:
    (B, n, 3). Pad rows and columns are masked in every channel.
    """

    channels: np.ndarray
    valid: np.ndarray
    fusion: np.ndarray
    ablation: bool = False


def stack_masks(masks: Sequence[DecouplingMasks], n: int, dtype=np.float64) -> BatchMasks:
    B = len(masks)
    channels = np.full((B, 3, n, n), NEG_INF, dtype=dtype)
    valid = np.zeros((B, n, 3), dtype=dtype)
    fusion = np.full((B, n, 3), NEG_INF, dtype=dtype)
    for b, m in enumerate(masks):
        k = m.n
        for c, name in enumerate(CHANNELS):
            channels[b, c, :k, :k] = m.channel(name)
        valid[b, :k] = m.validity()
        fusion[b, :k] = m.fusion
    return BatchMasks(channels, valid, fusion, ablation=any(m.ablation for m in masks))
