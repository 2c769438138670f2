"""Attention and gate export for offline heatmaps.

JSON fields::

    task, context          task name and which tokenized context was run
    tokens                 token strings, one per position
    utterance_index        utterance id per position
    utterance_bounds       [start, end) token range per utterance
    channels               {f2c|c2c|p2c: {"valid_rows": [bool],
                                          "heads": [n x n weights per head]}}
    gates                  per position [f2c, c2c, p2c] gate weight averaged
                           over features, or null without MoE fusion
"""

from __future__ import annotations

import json
import os

import numpy as np

from ..batching import collate, encode_samples
from ..data import TaskSample
from ..masking import CHANNELS
from .checkpoint import Checkpoint, load_checkpoint


def attention_record(ckpt: Checkpoint, sample: TaskSample, context: int | None = None) -> dict:
    model, vocab = ckpt.model, ckpt.vocab
    cfg = model.config
    if not cfg.uses_bidm:
        raise ValueError("model has no decoupling layers to export")
    enc = encode_samples([sample], vocab, cfg.max_len, cfg.max_target_len)[0]
    if context is None:
        context = enc.label if enc.label is not None else 0
    if not 0 <= context < len(enc.contexts):
        raise ValueError(f"context {context} out of range for {len(enc.contexts)} contexts")
    model.eval()
    batch = collate([enc], vocab, cfg.zero_masks, model.dtype)
    _, extras = model.represent(batch, record=True)
    ctx = enc.contexts[context]
    k = ctx.n
    valid = batch.masks.valid[context, :k]
    channels = {}
    for c, name in enumerate(CHANNELS):
        w = np.asarray(extras["attention"][name].data[context], dtype=np.float64)[:, :k, :k]
        channels[name] = {
            "valid_rows": [bool(v) for v in valid[:, c]],
            "heads": [head.tolist() for head in w],
        }
    gates = extras.get("gates")
    gate_rows = None
    if gates is not None:
        gate_rows = np.asarray(gates.data[context, :k], dtype=np.float64).mean(axis=1).tolist()
    return {
        "task": cfg.task,
        "context": int(context),
        "tokens": list(ctx.tokens),
        "utterance_index": [int(i) for i in ctx.utterance_index],
        "utterance_bounds": [list(map(int, b)) for b in ctx.utterance_bounds()],
        "channels": channels,
        "gates": gate_rows,
    }


def export_attention(checkpoint: str | Checkpoint, sample: TaskSample, out_path: str,
                     context: int | None = None) -> dict:
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    record = attention_record(ckpt, sample, context)
    d = os.path.dirname(out_path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(record, fh)
    return record
