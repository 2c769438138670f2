"""Training loop and evaluation."""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..batching import Batch, EncodedSample, collate, encode_samples
from ..data import TaskSample, Vocab, load_jsonl, split_words
from ..model import BidenModel
from ..numkit import Tape, backward
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TASK_ALIASES, Config, seed_streams
from .metrics import (
    PRIMARY_METRIC,
    MetricsReport,
    exact_match,
    gold_rank,
    rouge_max,
    token_f1,
)
from .optim import AdamW, linear_schedule

log = logging.getLogger("biden.train")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: BidenModel
    vocab: Vocab
    history: list[dict] = field(default_factory=list)
    best_metric: float = float("-inf")
    best_epoch: int = -1
    checkpoint_path: str | None = None
    steps: int = 0


def bucketed_batches(samples: Sequence[EncodedSample], batch_size: int,
                     rng: np.random.Generator | None, window: int = 50) -> list[list[int]]:
    """Index batches of similar length.

    Samples are shuffled, cut into windows of ``window`` batches, sorted by
    length inside each window, and the resulting batches shuffled again.
    Without ``rng`` the order is the input order.
    """
    idx = np.arange(len(samples)) if rng is None else rng.permutation(len(samples))
    if rng is None:
        return [list(idx[i: i + batch_size]) for i in range(0, len(idx), batch_size)]
    lengths = np.array([max(c.n for c in s.contexts) for s in samples])
    span = batch_size * window
    batches = []
    for w in range(0, len(idx), span):
        chunk = idx[w: w + span]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches += [list(chunk[i: i + batch_size]) for i in range(0, len(chunk), batch_size)]
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _load(path_or_samples, on_error="raise") -> list[TaskSample]:
    if isinstance(path_or_samples, (str, os.PathLike)):
        return load_jsonl(path_or_samples, on_error=on_error)
    return list(path_or_samples)


def train(config: Config, train_samples: Sequence[TaskSample] | None = None,
          dev_samples: Sequence[TaskSample] | None = None, vocab: Vocab | None = None,
          eval_train: bool = False) -> TrainResult:
    """Fit a model; validate after each epoch and keep the best checkpoint.

    Samples default to the config's data paths. The best checkpoint is written
    to ``<out_dir>/best.ckpt`` when ``out_dir`` is set; the returned model
    holds the best parameters either way.
    """
    config.check_paths()
    if train_samples is None:
        if config.train_path is None:
            raise TrainingError("no training data: set train_path or pass samples")
        train_samples = _load(config.train_path)
    if dev_samples is None and config.dev_path is not None:
        dev_samples = _load(config.dev_path)
    bad = {s.task.type for s in train_samples} - {config.task}
    if bad:
        raise TrainingError(f"config task {config.task} does not match data task(s) {sorted(bad)}")
    log.info("seed %d, config hash %s", config.seed, config.hash())

    streams = seed_streams(config.seed)
    vocab = vocab or Vocab.build(train_samples, config.max_vocab)
    dtype = config.dtype
    enc_train = encode_samples(train_samples, vocab, config.max_len, config.max_target_len)
    enc_dev = encode_samples(dev_samples, vocab, config.max_len, config.max_target_len) \
        if dev_samples else []
    model = BidenModel(config.model_config(len(vocab)), streams["init"], dtype=dtype)
    model.set_dropout_rng(streams["dropout"])
    params = model.parameters()
    opt = AdamW(params, config.lr, (config.beta1, config.beta2), config.eps, config.weight_decay)

    steps_per_epoch = math.ceil(len(enc_train) / config.batch_size)
    total = steps_per_epoch * config.epochs
    if config.max_steps is not None:
        total = min(total, config.max_steps)
    result = TrainResult(model, vocab)
    best_state = None
    step = 0
    for epoch in range(config.epochs):
        if step >= total:
            break
        model.train()
        t0, losses = time.perf_counter(), []
        for idx in bucketed_batches(enc_train, config.batch_size, streams["data"]):
            if step >= total:
                break
            batch = collate([enc_train[i] for i in idx], vocab, config.zero_masks, dtype)
            with Tape() as tape:
                loss = model.loss(batch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at step {step} (epoch {epoch})")
            grads = backward(tape, loss)
            opt.step(grads, linear_schedule(step, total, config.lr, config.warmup_fraction))
            losses.append(value)
            step += 1
        model.eval()
        entry = {"epoch": epoch, "step": step, "loss": float(np.mean(losses)) if losses else None,
                 "seconds": round(time.perf_counter() - t0, 2)}
        if enc_dev:
            entry["dev"] = evaluate_model(model, enc_dev, vocab, config.zero_masks).metrics
        if eval_train:
            entry["train"] = evaluate_model(model, enc_train, vocab, config.zero_masks).metrics
        result.history.append(entry)
        log.info("epoch %d %s", epoch, entry)
        scored = entry.get("dev") or entry.get("train")
        score = scored[PRIMARY_METRIC[config.task]] if scored else -entry["loss"]
        if score > result.best_metric:
            result.best_metric, result.best_epoch = score, epoch
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
            if config.out_dir:
                result.checkpoint_path = os.path.join(config.out_dir, "best.ckpt")
                save_checkpoint(result.checkpoint_path, model, vocab, config.to_dict(),
                                {"epoch": epoch, "step": step, "metric": score})
    if best_state is not None:
        model.load_state_dict(best_state)
    result.steps = step
    return result


def _batches(samples: Sequence[EncodedSample], vocab: Vocab, zero_mask: bool, dtype,
             batch_size: int):
    for i in range(0, len(samples), batch_size):
        yield collate(samples[i: i + batch_size], vocab, zero_mask, dtype)


def sample_scores(model: BidenModel, samples: Sequence[EncodedSample], vocab: Vocab,
                  zero_mask: bool = False, batch_size: int = 64) -> list[dict[str, float]]:
    """Per-sample metric values, in input order."""
    task = model.config.task
    out: list[dict[str, float]] = []
    for batch in _batches(samples, vocab, zero_mask, model.dtype, batch_size):
        if task == "response_selection":
            for row, label in zip(model.candidate_scores(batch), batch.labels):
                r = gold_rank(row, int(label))
                out.append({"R@1": float(r <= 1), "R@2": float(r <= 2), "MRR": 1.0 / r})
        elif task == "extractive_qa":
            for (s, e), gold, ctx in zip(model.predict_spans(batch), batch.spans, batch.contexts):
                pred = list(ctx.tokens[s: e + 1])
                ref = list(ctx.tokens[gold[0]: gold[1] + 1])
                out.append({"EM": exact_match(pred, ref), "F1": token_f1(pred, ref)})
        else:
            hits = _token_hits(model, batch)
            gen = model.generate(batch, vocab.bos_id, vocab.eos_id)
            for ids, s, acc in zip(gen, batch.samples, hits):
                cand = vocab.decode(ids)
                refs = [split_words(r) for r in s.references]
                scores = rouge_max(cand, refs)
                scores["token_accuracy"] = acc
                out.append(scores)
    return out


def _token_hits(model: BidenModel, batch: Batch) -> list[float]:
    H_e = model.represent(batch)
    logits = model.decoder.logits(batch.target_in, H_e, batch.key_mask).data
    hit = (np.argmax(logits, axis=-1) == batch.target_out) & batch.target_mask
    return list(hit.sum(axis=1) / np.maximum(batch.target_mask.sum(axis=1), 1))


def evaluate_model(model: BidenModel, samples: Sequence[EncodedSample], vocab: Vocab,
                   zero_mask: bool = False, batch_size: int = 64) -> MetricsReport:
    rows = sample_scores(model, samples, vocab, zero_mask, batch_size)
    keys = rows[0].keys() if rows else []
    metrics = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    return MetricsReport(model.config.task, metrics, len(rows))


def evaluate(checkpoint: str | Checkpoint, data, task: str | None = None,
             batch_size: int = 64) -> MetricsReport:
    """Metrics of a saved model on a JSONL file or a list of samples."""
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    model = ckpt.model
    cfg = model.config
    task = TASK_ALIASES.get(task, task)
    if task is not None and task != cfg.task:
        raise TrainingError(f"checkpoint was trained for {cfg.task}, not {task}")
    samples = _load(data)
    bad = {s.task.type for s in samples} - {cfg.task}
    if bad:
        raise TrainingError(f"data task(s) {sorted(bad)} do not match checkpoint task {cfg.task}")
    model.eval()
    enc = encode_samples(samples, ckpt.vocab, cfg.max_len, cfg.max_target_len)
    return evaluate_model(model, enc, ckpt.vocab, cfg.zero_masks, batch_size)
