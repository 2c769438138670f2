"""Seeded synthetic corpora for the three task families.

Dialogues are filler words with one keyword per utterance; all keywords in a
dialogue are distinct. The three generators:

* ``"a"`` temporal response selection: the correct candidate echoes the
  keyword of the final history utterance. Up to ``hard_negatives``
  distractors echo keywords of earlier utterances of the same dialogue (with
  ``same_speaker_negatives``, only earlier turns of the final speaker, so
  speaker parity alone cannot identify the answer); the remaining ones echo
  keywords that appear in other dialogues only.
* ``"b"`` span QA: the question names a keyword; the answer is its position.
* ``"c"`` copy summarization: the summary lists the dialogue's keywords in order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schema import (
    Dialogue,
    ExtractiveQA,
    ResponseSelection,
    Summarization,
    TaskSample,
    Utterance,
)
from .tokenizer import locate_answer

_ALIASES = {
    "a": "a", "response_selection": "a",
    "b": "b", "extractive_qa": "b",
    "c": "c", "summarization": "c",
}


@dataclass(frozen=True)
class SynthConfig:
    min_utterances: int = 5
    max_utterances: int = 7
    min_words: int = 1
    max_words: int = 2
    num_candidates: int = 4
    hard_negatives: int = 3
    same_speaker_negatives: bool = True
    num_keywords: int = 20
    num_fillers: int = 5
    speakers: tuple[str, ...] = ("A", "B")


def _keyword(i: int) -> str:
    return f"k{i}"


def _filler(i: int) -> str:
    return f"f{i}"


def _utterance(rng, cfg: SynthConfig, keyword: str) -> str:
    n = int(rng.integers(cfg.min_words, cfg.max_words + 1))
    words = [_filler(int(i)) for i in rng.integers(0, cfg.num_fillers, size=n - 1)]
    words.insert(int(rng.integers(0, n)), keyword)
    return " ".join(words)


def _dialogue(rng, cfg: SynthConfig, sid: str, n_utts: int, multi_party: bool = False):
    keys = rng.choice(cfg.num_keywords, size=n_utts, replace=False)
    keywords = [_keyword(int(k)) for k in keys]
    utts = []
    for u, kw in enumerate(keywords):
        if multi_party:
            spk = cfg.speakers[int(rng.integers(0, len(cfg.speakers)))]
        else:
            spk = cfg.speakers[u % len(cfg.speakers)]
        utts.append(Utterance(spk, _utterance(rng, cfg, kw)))
    return Dialogue(sid, tuple(utts)), keywords


def _selection_sample(rng, cfg: SynthConfig, sid: str) -> TaskSample:
    n_utts = int(rng.integers(cfg.min_utterances, cfg.max_utterances + 1))
    dialogue, keywords = _dialogue(rng, cfg, sid, n_utts)
    earlier = keywords[:-1]
    if cfg.same_speaker_negatives:
        # earlier turns by the final speaker only
        earlier = keywords[-3::-2][::-1]
    n_hard = min(cfg.hard_negatives, len(earlier), cfg.num_candidates - 1)
    hard = [earlier[int(i)] for i in rng.choice(len(earlier), size=n_hard, replace=False)]
    used = set(keywords)
    outside = []
    while len(outside) < cfg.num_candidates - 1 - n_hard:
        kw = _keyword(int(rng.integers(0, cfg.num_keywords)))
        if kw not in used:
            used.add(kw)
            outside.append(kw)
    echoes = [keywords[-1]] + hard + outside
    order = rng.permutation(cfg.num_candidates)
    candidates = [None] * cfg.num_candidates
    for slot, kw in zip(order, echoes):
        candidates[int(slot)] = _utterance(rng, cfg, kw)
    return TaskSample(dialogue, ResponseSelection(tuple(candidates), int(order[0])))


def _qa_sample(rng, cfg: SynthConfig, sid: str) -> TaskSample:
    n_utts = int(rng.integers(cfg.min_utterances, cfg.max_utterances + 1))
    dialogue, keywords = _dialogue(rng, cfg, sid, n_utts, multi_party=True)
    target = int(rng.integers(0, n_utts))
    span = locate_answer(dialogue, target, keywords[target])
    return TaskSample(dialogue, ExtractiveQA(f"where is {keywords[target]}", span))


def _summary_sample(rng, cfg: SynthConfig, sid: str) -> TaskSample:
    n_utts = int(rng.integers(cfg.min_utterances, cfg.max_utterances + 1))
    dialogue, keywords = _dialogue(rng, cfg, sid, n_utts)
    return TaskSample(dialogue, Summarization((" ".join(keywords),)))


def synth_gen(task: str, size: int, seed: int, config: SynthConfig | None = None) -> list[TaskSample]:
    """Generate ``size`` samples of task family ``task`` (a/b/c or its full name)."""
    if size <= 0:
        raise ValueError(f"size must be positive, got {size}")
    try:
        kind = _ALIASES[task]
    except KeyError:
        raise ValueError(f"unknown synthetic task {task!r}") from None
    cfg = config or SynthConfig()
    rng = np.random.default_rng(seed)
    make = {"a": _selection_sample, "b": _qa_sample, "c": _summary_sample}[kind]
    return [make(rng, cfg, f"{kind}-{seed}-{i}") for i in range(size)]
