"""Ranking, span and ROUGE metrics.

ROUGE follows the py-rouge convention used for dialogue summarization: F1 of
n-gram overlap (ROUGE-N) or of LCS length (ROUGE-L), no stemming, no
stopword removal, maximised over the references of a sample.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def gold_rank(scores: Sequence[float], gold: int) -> int:
    """1-based rank of ``gold``; equal scores rank the lower index first."""
    scores = np.asarray(scores)
    s = scores[gold]
    return int(1 + np.sum(scores > s) + np.sum(scores[:gold] == s))


def recall_at_k(scores: np.ndarray, labels: Sequence[int], k: int) -> float:
    ranks = [gold_rank(row, g) for row, g in zip(scores, labels)]
    return float(np.mean([r <= k for r in ranks])) if ranks else 0.0


def mean_reciprocal_rank(scores: np.ndarray, labels: Sequence[int]) -> float:
    ranks = [gold_rank(row, g) for row, g in zip(scores, labels)]
    return float(np.mean([1.0 / r for r in ranks])) if ranks else 0.0


def exact_match(pred: Sequence[str], gold: Sequence[str]) -> float:
    return float(list(pred) == list(gold))


def token_f1(pred: Sequence[str], gold: Sequence[str]) -> float:
    """Harmonic mean of bag-of-tokens precision and recall."""
    common = Counter(pred) & Counter(gold)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(gold)
    return 2 * precision * recall / (precision + recall)


def _f1(overlap: float, n_cand: int, n_ref: int) -> float:
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 2 * p * r / (p + r)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> float:
    cand, ref = _ngrams(candidate, n), _ngrams(reference, n)
    overlap = sum((cand & ref).values())
    return _f1(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    return _f1(lcs_length(candidate, reference), len(candidate), len(reference))


def rouge_max(candidate: Sequence[str], references: Sequence[Sequence[str]]) -> dict[str, float]:
    """ROUGE-1/2/L, each maximised independently over ``references``."""
    return {
        "ROUGE-1": max(rouge_n(candidate, r, 1) for r in references),
        "ROUGE-2": max(rouge_n(candidate, r, 2) for r in references),
        "ROUGE-L": max(rouge_l(candidate, r) for r in references),
    }


@dataclass
class MetricsReport:
    task: str
    metrics: dict[str, float]
    count: int
    per_seed: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"task": self.task, "metrics": self.metrics, "count": self.count,
                "per_seed": self.per_seed}

    def __getitem__(self, key: str) -> float:
        return self.metrics[key]


PRIMARY_METRIC = {
    "response_selection": "R@1",
    "extractive_qa": "F1",
    "summarization": "ROUGE-L",
}
