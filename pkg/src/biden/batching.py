"""Padding tokenized samples into model batches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import (
    DataError,
    ExtractiveQA,
    ResponseSelection,
    Summarization,
    TaskSample,
    TokenizedContext,
    Vocab,
    encode_target,
    tokenize,
)
from .masking import BatchMasks, build_decoupling_masks, key_padding_mask, stack_masks, zero_masks


@dataclass(frozen=True)
class EncodedSample:
    """A sample after tokenization: its contexts plus the task target."""

    id: str
    task: str
    contexts: tuple[TokenizedContext, ...]
    label: int | None = None
    span: tuple[int, int] | None = None
    target: np.ndarray | None = None
    references: tuple[str, ...] = ()


def encode_samples(samples: Sequence[TaskSample], vocab: Vocab, max_len: int = 128,
                   max_target_len: int = 64, on_error: str = "raise") -> list[EncodedSample]:
    out = []
    for s in samples:
        try:
            ctxs = tuple(tokenize(s, vocab, max_len))
        except DataError:
            if on_error == "raise":
                raise
            continue
        task = s.task
        if isinstance(task, ResponseSelection):
            out.append(EncodedSample(s.dialogue.id, task.type, ctxs, label=task.label))
        elif isinstance(task, ExtractiveQA):
            out.append(EncodedSample(s.dialogue.id, task.type, ctxs, span=ctxs[0].answer_span))
        elif isinstance(task, Summarization):
            out.append(EncodedSample(s.dialogue.id, task.type, ctxs,
                                     target=encode_target(task.references[0], vocab, max_target_len),
                                     references=task.references))
    return out


@dataclass
class Batch:
    token_ids: np.ndarray
    segment_ids: np.ndarray
    position_ids: np.ndarray
    lengths: np.ndarray
    utterance_index: np.ndarray
    is_content: np.ndarray
    is_question: np.ndarray
    key_mask: np.ndarray
    masks: BatchMasks
    pool: np.ndarray
    utt_valid: np.ndarray
    contexts: list[TokenizedContext]
    samples: list[EncodedSample] = field(default_factory=list)
    group_size: int = 1
    labels: np.ndarray | None = None
    spans: np.ndarray | None = None
    target_in: np.ndarray | None = None
    target_out: np.ndarray | None = None
    target_mask: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.token_ids)

    @property
    def pad(self) -> np.ndarray:
        return self.utterance_index < 0

    def span_mask(self) -> np.ndarray:
        """Tokens a QA span may start or end on: history words only."""
        return self.is_content & ~self.is_question


def collate_contexts(contexts: Sequence[TokenizedContext], pad_id: int = 0,
                     zero_mask: bool = False, dtype=np.float64) -> dict:
    B = len(contexts)
    n = max(c.n for c in contexts)
    U = max(c.num_utterances for c in contexts)
    token_ids = np.full((B, n), pad_id, dtype=np.int64)
    segment_ids = np.zeros((B, n), dtype=np.int64)
    position_ids = np.zeros((B, n), dtype=np.int64)
    uidx = np.full((B, n), -1, dtype=np.int64)
    content = np.zeros((B, n), dtype=bool)
    question = np.zeros((B, n), dtype=bool)
    pool = np.zeros((B, U, n), dtype=bool)
    utt_valid = np.zeros((B, U), dtype=bool)
    lengths = np.array([c.n for c in contexts])
    for b, c in enumerate(contexts):
        k = c.n
        token_ids[b, :k] = c.token_ids
        segment_ids[b, :k] = c.segment_ids
        position_ids[b, :k] = c.position_ids
        uidx[b, :k] = c.utterance_index
        content[b, :k] = c.is_content
        question[b, :k] = c.is_question
        for u in range(c.num_utterances):
            pool[b, u, :k] = (c.utterance_index == u) & c.is_content
        utt_valid[b] = pool[b].any(axis=1)
    if zero_mask:
        per = [zero_masks(c.n) for c in contexts]
    else:
        per = [build_decoupling_masks(c.utterance_index) for c in contexts]
    return dict(
        token_ids=token_ids, segment_ids=segment_ids, position_ids=position_ids,
        lengths=lengths, utterance_index=uidx, is_content=content, is_question=question,
        key_mask=key_padding_mask(lengths, n).astype(dtype),
        masks=stack_masks(per, n, dtype), pool=pool, utt_valid=utt_valid,
        contexts=list(contexts),
    )


def collate(samples: Sequence[EncodedSample], vocab: Vocab, zero_mask: bool = False,
            dtype=np.float64) -> Batch:
    """Pad a list of same-task samples.

    Response-selection samples contribute one row per candidate, grouped
    sample-major; all of them must have the same number of candidates.
    """
    if not samples:
        raise ValueError("cannot collate an empty batch")
    tasks = {s.task for s in samples}
    if len(tasks) != 1:
        raise ValueError(f"mixed tasks in one batch: {sorted(tasks)}")
    task = tasks.pop()
    contexts = [c for s in samples for c in s.contexts]
    fields = collate_contexts(contexts, vocab.pad_id, zero_mask, dtype)
    batch = Batch(**fields, samples=list(samples))
    if task == "response_selection":
        sizes = {len(s.contexts) for s in samples}
        if len(sizes) != 1:
            raise ValueError("samples in a batch need equal candidate counts")
        batch.group_size = sizes.pop()
        batch.labels = np.array([s.label for s in samples], dtype=np.int64)
    elif task == "extractive_qa":
        batch.spans = np.array([s.span for s in samples], dtype=np.int64)
    else:
        m = max(len(s.target) for s in samples) - 1
        batch.target_in = np.full((len(samples), m), vocab.pad_id, dtype=np.int64)
        batch.target_out = np.full((len(samples), m), vocab.pad_id, dtype=np.int64)
        batch.target_mask = np.zeros((len(samples), m), dtype=bool)
        for i, s in enumerate(samples):
            t = s.target
            batch.target_in[i, : len(t) - 1] = t[:-1]
            batch.target_out[i, : len(t) - 1] = t[1:]
            batch.target_mask[i, : len(t) - 1] = True
    return batch
