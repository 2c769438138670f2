"""Run configuration: model dims, optimisation, ablation flags and data paths."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from ..model import TASKS, ModelConfig

PRECISIONS = {"f32": np.float32, "f64": np.float64}
TASK_ALIASES = {"a": "response_selection", "b": "extractive_qa", "c": "summarization"}


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    task: str = "response_selection"
    # model
    d: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int | None = None
    d_g: int | None = None
    dec_layers: int = 2
    dec_heads: int = 2
    max_len: int = 128
    max_target_len: int = 64
    max_vocab: int = 2000
    dropout: float = 0.0
    max_span: int = 20
    # optimisation
    lr: float = 1e-3
    warmup_fraction: float = 0.01
    epochs: int = 3
    batch_size: int = 32
    max_steps: int | None = None
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    precision: str = "f32"
    # ablations
    no_bidm: bool = False
    zero_masks: bool = False
    mean_pool_fusion: bool = False
    no_bigru: bool = False
    bi_rnn_baseline: str | None = None
    init_mode: str = "random"
    # data and output
    train_path: str | None = None
    dev_path: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        self.task = TASK_ALIASES.get(self.task, self.task)
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {', '.join(TASKS)}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be positive and epochs non-negative")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, task=self.task, d=self.d, n_heads=self.n_heads,
            n_layers=self.n_layers, d_ff=self.d_ff, d_g=self.d_g, max_len=self.max_len,
            dec_layers=self.dec_layers, dec_heads=self.dec_heads,
            max_target_len=self.max_target_len, dropout=self.dropout, max_span=self.max_span,
            no_bidm=self.no_bidm, zero_masks=self.zero_masks,
            mean_pool_fusion=self.mean_pool_fusion, no_bigru=self.no_bigru,
            bi_rnn_baseline=self.bi_rnn_baseline, init_mode=self.init_mode,
        )

    def check_paths(self) -> None:
        for name in ("train_path", "dev_path"):
            p = getattr(self, name)
            if p is not None and not os.path.exists(p):
                raise ConfigError(f"{name} does not exist: {p}")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **kw) -> "Config":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str) -> "Config":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(data)


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for data order, weight init and dropout."""
    data, init, dropout = np.random.SeedSequence(seed).spawn(3)
    return {
        "data": np.random.default_rng(data),
        "init": np.random.default_rng(init),
        "dropout": np.random.default_rng(dropout),
    }
