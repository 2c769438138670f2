"""Word-level vocabulary and the flat dialogue-context layout.

Layout of one context::

    [CLS] spk w w ... [SEP] spk w ... [SEP] ... spk' w ... [SEP]

where the final utterance is the response candidate (speaker token
``[RSP]``), the question (``[QST]``) or simply the last dialogue turn.
``[CLS]`` belongs to utterance 0; every ``[SEP]`` to the utterance it closes.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .schema import (
    DataError,
    Dialogue,
    ExtractiveQA,
    ResponseSelection,
    Summarization,
    TaskSample,
)

PAD, UNK, CLS, SEP, BOS, EOS, RSP, QST = (
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]", "[RSP]", "[QST]",
)
RESERVED = (PAD, UNK, CLS, SEP, BOS, EOS, RSP, QST)

_WORD = re.compile(r"\w+|[^\w\s]")


def split_words(text: str) -> list[str]:
    """Lowercase, then split on whitespace and around punctuation."""
    return _WORD.findall(text.lower())


def speaker_token(name: str) -> str:
    return f"<spk:{name.lower()}>"


class Vocab:
    """Token/id bijection with the reserved tokens at ids 0..7."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocab must start with the reserved tokens")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocab")

    pad_id = 0
    unk_id = 1
    cls_id = 2
    sep_id = 3
    bos_id = 4
    eos_id = 5
    rsp_id = 6
    qst_id = 7

    @classmethod
    def build(cls, samples: Iterable[TaskSample], max_size: int = 2000) -> "Vocab":
        """Speakers first (sorted), then words by descending count, ties alphabetical."""
        speakers, words = set(), Counter()
        for s in samples:
            for u in s.dialogue.utterances:
                speakers.add(speaker_token(u.speaker))
                words.update(split_words(u.text))
            task = s.task
            if isinstance(task, ResponseSelection):
                for c in task.candidates:
                    words.update(split_words(c))
            elif isinstance(task, ExtractiveQA):
                words.update(split_words(task.question))
            elif isinstance(task, Summarization):
                for r in task.references:
                    words.update(split_words(r))
        tokens = list(RESERVED) + sorted(speakers)
        ranked = sorted(words.items(), key=lambda kv: (-kv[1], kv[0]))
        tokens += [w for w, _ in ranked if w not in tokens][: max(0, max_size - len(tokens))]
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.itos)

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.id(w) for w in words]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def speaker_id(self, name: str) -> int:
        return self.id(speaker_token(name))


@dataclass(frozen=True)
class TokenizedContext:
    token_ids: np.ndarray
    utterance_index: np.ndarray
    segment_ids: np.ndarray
    position_ids: np.ndarray
    is_cls: np.ndarray
    is_sep: np.ndarray
    is_speaker: np.ndarray
    is_question: np.ndarray
    tokens: tuple[str, ...]
    answer_span: tuple[int, int] | None = None
    dropped_utterances: int = 0

    @property
    def n(self) -> int:
        return len(self.token_ids)

    @property
    def is_content(self) -> np.ndarray:
        """Word tokens: not [CLS], [SEP], or a speaker marker."""
        return ~(self.is_cls | self.is_sep | self.is_speaker)

    @property
    def num_utterances(self) -> int:
        return int(self.utterance_index[-1]) + 1

    def utterance_bounds(self) -> list[tuple[int, int]]:
        """Half-open token ranges, one per utterance."""
        idx = self.utterance_index
        starts = np.flatnonzero(np.r_[True, idx[1:] != idx[:-1]])
        ends = np.r_[starts[1:], len(idx)]
        return [(int(a), int(b)) for a, b in zip(starts, ends)]


def _segment_lengths(words_per_utt: Sequence[int]) -> list[int]:
    # speaker token + words + [SEP]; [CLS] is added to the first kept utterance.
    return [n + 2 for n in words_per_utt]


def history_content_positions(dialogue: Dialogue) -> set[int]:
    """Token positions of dialogue words in the untruncated layout."""
    pos, out = 1, set()
    for u in dialogue.utterances:
        n = len(split_words(u.text))
        out.update(range(pos + 1, pos + 1 + n))
        pos += n + 2
    return out


def locate_answer(dialogue: Dialogue, utterance: int, answer_text: str) -> tuple[int, int]:
    """Span of the first occurrence of ``answer_text`` inside one utterance."""
    if not 0 <= utterance < len(dialogue.utterances):
        raise DataError(f"task.answer_utterance: {utterance} out of range")
    target = split_words(answer_text)
    if not target:
        raise DataError("task.answer_text: empty answer")
    words = split_words(dialogue.utterances[utterance].text)
    offset = 1 + sum(len(split_words(u.text)) + 2 for u in dialogue.utterances[:utterance]) + 1
    for i in range(len(words) - len(target) + 1):
        if words[i: i + len(target)] == target:
            return offset + i, offset + i + len(target) - 1
    raise DataError(f"task.answer_text: {answer_text!r} not found in utterance {utterance}")


def layout(
    utterances: Sequence[tuple[str, Sequence[str]]],
    vocab: Vocab,
    max_len: int,
    final_flag: str | None = None,
) -> TokenizedContext:
    """Lay out ``(speaker_token, words)`` pairs, truncating from the front.

    Whole leading utterances are dropped until the sequence fits; the last
    utterance is never dropped. ``final_flag="question"`` marks the last
    utterance's tokens as question tokens.
    """
    lengths = _segment_lengths([len(w) for _, w in utterances])
    drop = 0
    while 1 + sum(lengths[drop:]) > max_len:
        drop += 1
        if drop >= len(utterances):
            raise DataError(
                f"final utterance alone needs {1 + lengths[-1]} tokens, max_len is {max_len}"
            )
    kept = utterances[drop:]
    tokens, uidx, flags = [CLS], [0], [("cls",)]
    for u, (spk, words) in enumerate(kept):
        tokens.append(spk)
        uidx.append(u)
        flags.append(("speaker",))
        tokens.extend(words)
        uidx.extend([u] * len(words))
        flags.extend([()] * len(words))
        tokens.append(SEP)
        uidx.append(u)
        flags.append(("sep",))
    uidx = np.asarray(uidx, dtype=np.int64)
    n = len(tokens)
    is_question = np.zeros(n, dtype=bool)
    if final_flag == "question":
        is_question = uidx == uidx[-1]
    return TokenizedContext(
        token_ids=np.asarray(vocab.encode(tokens), dtype=np.int64),
        utterance_index=uidx,
        segment_ids=uidx % 2,
        position_ids=np.arange(n, dtype=np.int64),
        is_cls=np.array(["cls" in f for f in flags]),
        is_sep=np.array(["sep" in f for f in flags]),
        is_speaker=np.array(["speaker" in f for f in flags]),
        is_question=is_question,
        tokens=tuple(tokens),
        dropped_utterances=drop,
    )


def _history(dialogue: Dialogue) -> list[tuple[str, list[str]]]:
    return [(speaker_token(u.speaker), split_words(u.text)) for u in dialogue.utterances]


def tokenize(sample: TaskSample, vocab: Vocab, max_len: int = 128) -> list[TokenizedContext]:
    """Tokenize a sample into its model inputs.

    Response selection yields one context per candidate (candidate appended as
    the final utterance); QA yields one context with the question appended and
    the answer span shifted to the truncated layout; summarization yields the
    dialogue alone.
    """
    hist = _history(sample.dialogue)
    task = sample.task
    if isinstance(task, ResponseSelection):
        return [layout(hist + [(RSP, split_words(c))], vocab, max_len) for c in task.candidates]
    if isinstance(task, ExtractiveQA):
        ctx = layout(hist + [(QST, split_words(task.question))], vocab, max_len, "question")
        # The new [CLS] replaces the old one, so surviving positions move left
        # by exactly the dropped segment lengths.
        shift = sum(_segment_lengths([len(w) for _, w in hist[: ctx.dropped_utterances]]))
        a_s, a_e = task.answer_span[0] - shift, task.answer_span[1] - shift
        n_hist = int(np.sum(~ctx.is_question))
        if a_s < 1 or a_e >= n_hist:
            raise DataError(
                f"sample {sample.dialogue.id!r}: answer span destroyed by truncation "
                f"({ctx.dropped_utterances} leading utterances dropped)"
            )
        return [_with_span(ctx, (a_s, a_e))]
    return [layout(hist, vocab, max_len)]


def _with_span(ctx: TokenizedContext, span: tuple[int, int]) -> TokenizedContext:

    return replace(ctx, answer_span=span)


def detokenize(ctx: TokenizedContext, vocab: Vocab) -> list[str]:
    """Word tokens of the context, specials and speaker markers removed."""
    return [vocab.itos[t] for t, c in zip(ctx.token_ids, ctx.is_content) if c]


def encode_target(text: str, vocab: Vocab, max_len: int = 64) -> np.ndarray:
    """``[BOS] words [EOS]`` ids, words clipped so the whole fits ``max_len``."""
    words = split_words(text)[: max(0, max_len - 2)]
    return np.asarray([vocab.bos_id] + vocab.encode(words) + [vocab.eos_id], dtype=np.int64)
