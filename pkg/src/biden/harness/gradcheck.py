"""End-to-end finite-difference gradient check for the three task pipelines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..batching import collate, encode_samples
from ..data import (
    Dialogue,
    ExtractiveQA,
    ResponseSelection,
    Summarization,
    TaskSample,
    Utterance,
    Vocab,
    locate_answer,
)
from ..model import TASKS, BidenModel, ModelConfig
from ..numkit import Tape, backward, default_dtype

TOLERANCE = 1e-4
# Gradients whose norm is below this are compared on an absolute scale:
# parameters such as a bias shared by all candidates get an exact zero
# analytic gradient and pure round-off from finite differences.
NORM_FLOOR = 1e-6


@dataclass
class TensorCheck:
    name: str
    shape: tuple[int, ...]
    rel_error: float


@dataclass
class GradcheckReport:
    task: str
    checks: list[TensorCheck] = field(default_factory=list)
    loss: float = 0.0

    @property
    def max_rel_error(self) -> float:
        return max((c.rel_error for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE

    def to_dict(self) -> dict:
        return {"task": self.task, "loss": self.loss, "max_rel_error": self.max_rel_error,
                "passed": self.passed,
                "tensors": {c.name: c.rel_error for c in self.checks}}


def tiny_samples(task: str) -> list[TaskSample]:
    """Two hand-written dialogues whose token layouts stay within 10 positions."""
    d1 = Dialogue("g1", (Utterance("A", "red"), Utterance("B", "blue sky")))
    d2 = Dialogue("g2", (Utterance("B", "sky"), Utterance("A", "red"), Utterance("B", "blue")))
    if task == "response_selection":
        return [TaskSample(d1, ResponseSelection(("sky", "red"), 0)),
                TaskSample(d2, ResponseSelection(("red", "blue"), 1))]
    if task == "extractive_qa":
        q1 = Dialogue("q1", (Utterance("A", "red"), Utterance("B", "sky")))
        q2 = Dialogue("q2", d2.utterances[:2])
        return [TaskSample(q1, ExtractiveQA("sky", locate_answer(q1, 1, "sky"))),
                TaskSample(q2, ExtractiveQA("sky", locate_answer(q2, 0, "sky")))]
    return [TaskSample(d1, Summarization(("red sky",))),
            TaskSample(d2, Summarization(("sky blue",)))]


def tiny_config(task: str, vocab_size: int, **overrides) -> ModelConfig:
    kw = dict(vocab_size=vocab_size, task=task, d=8, n_heads=2, n_layers=1, d_ff=16, d_g=4,
              max_len=10, dec_layers=1, dec_heads=2, max_target_len=6)
    kw.update(overrides)
    return ModelConfig(**kw)


def _rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), NORM_FLOOR)
    return float(np.linalg.norm(a - b) / scale)


def check_model(model: BidenModel, batch, h: float = 1e-5) -> tuple[float, list[TensorCheck]]:
    """Compare analytic and central-difference gradients for every parameter."""
    with Tape() as tape:
        loss = model.loss(batch)
    grads = backward(tape, loss)
    checks = []
    for name, p in model.named_parameters():
        analytic = grads.get(p)
        analytic = np.zeros_like(p.data) if analytic is None else analytic
        numeric = np.zeros_like(p.data)
        flat, nflat = p.data.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(model.loss(batch).data)
            flat[i] = orig - h
            down = float(model.loss(batch).data)
            flat[i] = orig
            nflat[i] = (up - down) / (2 * h)
        checks.append(TensorCheck(name, p.shape, _rel_error(analytic, numeric)))
    return float(loss.data), checks


def gradcheck(task: str, seed: int = 0, h: float = 1e-5, **overrides) -> GradcheckReport:
    """Gradient check of one task pipeline at tiny dims in float64."""
    samples = tiny_samples(task)
    vocab = Vocab.build(samples)
    cfg = tiny_config(task, len(vocab), **overrides)
    with default_dtype(np.float64):
        model = BidenModel(cfg, seed, dtype=np.float64)
        enc = encode_samples(samples, vocab, cfg.max_len, cfg.max_target_len)
        batch = collate(enc, vocab, cfg.zero_masks, np.float64)
        if batch.token_ids.shape[1] > 10:
            raise AssertionError("tiny gradcheck inputs must stay within 10 tokens")
        loss, checks = check_model(model, batch, h)
    return GradcheckReport(task, checks, loss)


def gradcheck_all(seed: int = 0) -> list[GradcheckReport]:
    return [gradcheck(t, seed) for t in TASKS]
