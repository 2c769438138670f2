"""Ablation grid: the full model against its component removals and the
naive recurrent baselines, over several seeds."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..data import TaskSample
from .config import Config
from .metrics import PRIMARY_METRIC
from .train import train

log = logging.getLogger("biden.ablate")

VARIANTS: dict[str, dict] = {
    "biden": {},
    "no_bidm": {"no_bidm": True},
    "zero_masks": {"zero_masks": True},
    "no_moe": {"mean_pool_fusion": True},
    "no_bigru": {"no_bigru": True},
    "bi_lstm": {"bi_rnn_baseline": "lstm"},
    "bi_gru": {"bi_rnn_baseline": "gru"},
}

LABELS = {
    "biden": "BiDeN",
    "no_bidm": "w/o BIDM",
    "zero_masks": "w/o BIDM (zero masks, same #params)",
    "no_moe": "w/o MoE (mean pooling)",
    "no_bigru": "w/o Bi-GRU",
    "bi_lstm": "encoder + Bi-LSTM",
    "bi_gru": "encoder + Bi-GRU",
}

_ABLATION_FLAGS = ("no_bidm", "zero_masks", "mean_pool_fusion", "no_bigru", "bi_rnn_baseline")


@dataclass
class AblationResult:
    task: str
    seeds: list[int]
    per_seed: dict[str, dict[int, dict[str, float]]] = field(default_factory=dict)

    def mean(self, variant: str, metric: str | None = None) -> float:
        metric = metric or PRIMARY_METRIC[self.task]
        return float(np.mean([self.per_seed[variant][s][metric] for s in self.seeds]))

    def means(self) -> dict[str, dict[str, float]]:
        out = {}
        for v, runs in self.per_seed.items():
            keys = next(iter(runs.values())).keys()
            out[v] = {k: float(np.mean([runs[s][k] for s in self.seeds])) for k in keys}
        return out

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "seeds": self.seeds,
            "per_seed": {v: {str(s): m for s, m in runs.items()} for v, runs in self.per_seed.items()},
            "mean": self.means(),
        }

    def table(self) -> str:
        means = self.means()
        keys = list(next(iter(means.values())).keys())
        primary = PRIMARY_METRIC[self.task]
        header = ["variant"] + keys + [f"{primary} s{s}" for s in self.seeds]
        rows = []
        for v in self.per_seed:
            rows.append([LABELS.get(v, v)] + [f"{means[v][k]:.3f}" for k in keys]
                        + [f"{self.per_seed[v][s][primary]:.3f}" for s in self.seeds])
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths))
        return "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows])


def variant_config(base: Config, variant: str, seed: int) -> Config:
    flags = {k: False for k in _ABLATION_FLAGS}
    flags["bi_rnn_baseline"] = None
    flags.update(VARIANTS[variant])
    out_dir = f"{base.out_dir}/{variant}-s{seed}" if base.out_dir else None
    return replace(base, seed=seed, out_dir=out_dir, **flags)


def run_ablation(base: Config, train_samples: Sequence[TaskSample], dev_samples: Sequence[TaskSample],
                 seeds: Sequence[int] = (0, 1, 2), variants: Sequence[str] | None = None) -> AblationResult:
    """Train every variant on every seed; report the best dev metrics per run."""
    variants = list(variants or VARIANTS)
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown variants: {', '.join(unknown)}")
    result = AblationResult(base.task, list(seeds))
    for v in variants:
        result.per_seed[v] = {}
        for s in seeds:
            run = train(variant_config(base, v, s), train_samples, dev_samples)
            best = run.history[run.best_epoch]["dev"]
            result.per_seed[v][s] = best
            log.info("%s seed %d: %s", v, s, best)
    return result
