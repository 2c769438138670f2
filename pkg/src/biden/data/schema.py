"""Dialogue and task-sample records plus JSONL ingestion."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

logger = logging.getLogger(__name__)

RESPONSE_SELECTION = "response_selection"
EXTRACTIVE_QA = "extractive_qa"
SUMMARIZATION = "summarization"
TASK_TYPES = (RESPONSE_SELECTION, EXTRACTIVE_QA, SUMMARIZATION)


class DataError(ValueError):
    """Raised for records that violate the sample schema."""


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str


@dataclass(frozen=True)
class Dialogue:
    id: str
    utterances: tuple[Utterance, ...]

    def __post_init__(self):
        if not self.utterances:
            raise DataError(f"dialogue {self.id!r}: needs at least one utterance")
        for i, utt in enumerate(self.utterances):
            if not utt.text.strip():
                raise DataError(f"dialogue {self.id!r}: utterances[{i}].text is empty")


@dataclass(frozen=True)
class ResponseSelection:
    candidates: tuple[str, ...]
    label: int
    type: str = field(default=RESPONSE_SELECTION, init=False)

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise DataError("task.candidates: need at least 2 candidates")
        if not 0 <= self.label < len(self.candidates):
            raise DataError(
                f"task.label: {self.label} out of range for {len(self.candidates)} candidates"
            )
        if any(not c.strip() for c in self.candidates):
            raise DataError("task.candidates: empty candidate text")


@dataclass(frozen=True)
class ExtractiveQA:
    """``answer_span`` indexes tokens of the untruncated tokenized layout."""

    question: str
    answer_span: tuple[int, int]
    type: str = field(default=EXTRACTIVE_QA, init=False)

    def __post_init__(self):
        if not self.question.strip():
            raise DataError("task.question: empty question")
        a_s, a_e = self.answer_span
        if not 0 <= a_s <= a_e:
            raise DataError(f"task.answer_span: invalid span {self.answer_span}")


@dataclass(frozen=True)
class Summarization:
    references: tuple[str, ...]
    type: str = field(default=SUMMARIZATION, init=False)

    def __post_init__(self):
        if not self.references or any(not r.strip() for r in self.references):
            raise DataError("task.references: need at least one non-empty reference")


Task = Union[ResponseSelection, ExtractiveQA, Summarization]


@dataclass(frozen=True)
class TaskSample:
    dialogue: Dialogue
    task: Task

    def __post_init__(self):
        if isinstance(self.task, ExtractiveQA):
            from .tokenizer import history_content_positions

            allowed = history_content_positions(self.dialogue)
            a_s, a_e = self.task.answer_span
            if a_s not in allowed or a_e not in allowed:
                raise DataError(
                    f"task.answer_span: {self.task.answer_span} is not inside dialogue-history tokens"
                )

    @property
    def task_type(self) -> str:
        return self.task.type


# -- JSON (de)serialisation -------------------------------------------------

def sample_to_dict(sample: TaskSample) -> dict:
    task = sample.task
    if isinstance(task, ResponseSelection):
        payload = {"type": task.type, "candidates": list(task.candidates), "label": task.label}
    elif isinstance(task, ExtractiveQA):
        payload = {"type": task.type, "question": task.question, "answer_span": list(task.answer_span)}
    else:
        payload = {"type": task.type, "references": list(task.references)}
    return {
        "id": sample.dialogue.id,
        "utterances": [{"speaker": u.speaker, "text": u.text} for u in sample.dialogue.utterances],
        "task": payload,
    }


def _require(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise DataError(f"missing field {where}{key}")
    value = obj[key]
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise DataError(f"field {where}{key} has wrong type {type(value).__name__}")
    return value


def sample_from_dict(obj: dict) -> TaskSample:
    if not isinstance(obj, dict):
        raise DataError("record is not a JSON object")
    sid = _require(obj, "id", str, "")
    raw_utts = _require(obj, "utterances", list, "")
    utts = []
    for i, u in enumerate(raw_utts):
        if not isinstance(u, dict):
            raise DataError(f"field utterances[{i}] is not an object")
        utts.append(Utterance(_require(u, "speaker", str, f"utterances[{i}]."),
                              _require(u, "text", str, f"utterances[{i}].")))
    dialogue = Dialogue(sid, tuple(utts))
    task = _require(obj, "task", dict, "")
    kind = _require(task, "type", str, "task.")
    if kind == RESPONSE_SELECTION:
        cands = _require(task, "candidates", list, "task.")
        if not all(isinstance(c, str) for c in cands):
            raise DataError("field task.candidates must hold strings")
        payload = ResponseSelection(tuple(cands), _require(task, "label", int, "task."))
    elif kind == EXTRACTIVE_QA:
        question = _require(task, "question", str, "task.")
        if "answer_span" in task:
            span = _require(task, "answer_span", list, "task.")
            if len(span) != 2 or not all(isinstance(x, int) for x in span):
                raise DataError("field task.answer_span must be two integers")
        else:
            from .tokenizer import locate_answer

            text = _require(task, "answer_text", str, "task.")
            utt = _require(task, "answer_utterance", int, "task.")
            span = locate_answer(dialogue, utt, text)
        payload = ExtractiveQA(question, (span[0], span[1]))
    elif kind == SUMMARIZATION:
        refs = _require(task, "references", list, "task.")
        if not all(isinstance(r, str) for r in refs):
            raise DataError("field task.references must hold strings")
        payload = Summarization(tuple(refs))
    else:
        raise DataError(f"field task.type has unknown value {kind!r}")
    return TaskSample(dialogue, payload)


def load_jsonl(path, on_error: str = "raise") -> list[TaskSample]:
    """Read one sample per line.

    With ``on_error="raise"`` (default) every invalid line is collected and a
    single :class:`DataError` names them all by line number; with ``"skip"``
    invalid lines are logged and dropped.
    """
    samples, errors = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                samples.append(sample_from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                errors.append(f"line {lineno}: invalid JSON ({exc.msg})")
            except DataError as exc:
                errors.append(f"line {lineno}: {exc}")
    if errors:
        if on_error == "raise":
            raise DataError(f"{path}: " + "; ".join(errors))
        for err in errors:
            logger.warning("%s: skipped %s", path, err)
    return samples


def dump_jsonl(samples: Iterable[TaskSample], path) -> None:
    """Write one JSON object per line to a path or an open text stream."""
    if hasattr(path, "write"):
        for s in samples:
            path.write(json.dumps(sample_to_dict(s), sort_keys=True) + "\n")
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        dump_jsonl(samples, fh)
