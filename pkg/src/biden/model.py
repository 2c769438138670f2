"""BiDeN: encoder, decoupling layers, MoE fusion and a task head."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .batching import Batch
from .core import DecouplingLayers, MoEFusion, init_copy_last_encoder_layer, mean_fuse
from .encoder import Encoder, encode
from .heads import (
    BiRNN,
    Decoder,
    SelectionHead,
    SpanHead,
    best_span,
    greedy_decode,
    qa_spans,
    select_response,
    summarize_loss,
)
from .masking import CHANNELS
from .numkit import Module, Tensor, default_dtype

TASKS = ("response_selection", "extractive_qa", "summarization")


@dataclass
class ModelConfig:
    vocab_size: int
    task: str = "response_selection"
    d: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int | None = None
    d_g: int | None = None
    max_len: int = 128
    dec_layers: int = 2
    dec_heads: int = 2
    max_target_len: int = 64
    dropout: float = 0.0
    max_span: int = 20
    # ablations
    no_bidm: bool = False
    zero_masks: bool = False
    mean_pool_fusion: bool = False
    no_bigru: bool = False
    bi_rnn_baseline: str | None = None
    init_mode: str = "random"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.d % self.n_heads or self.d % self.dec_heads:
            raise ValueError("d must be divisible by the number of heads")
        if self.bi_rnn_baseline not in (None, "gru", "lstm"):
            raise ValueError(f"bi_rnn_baseline must be gru, lstm or null, got {self.bi_rnn_baseline!r}")
        if self.init_mode not in ("random", "copy_last_encoder_layer"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if self.d_ff is None:
            self.d_ff = 4 * self.d
        if self.d_g is None:
            self.d_g = self.d // 2

    @property
    def uses_bidm(self) -> bool:
        return not self.no_bidm and self.bi_rnn_baseline is None

    def to_dict(self) -> dict:
        return asdict(self)


class BidenModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int = 0, dtype=np.float64):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self._cfg = cfg
        self._dtype = np.dtype(dtype).type
        d = cfg.d
        with default_dtype(self._dtype):
            self.encoder = Encoder(cfg.vocab_size, cfg.max_len, d, cfg.n_heads, cfg.n_layers,
                                   cfg.d_ff, rng, cfg.dropout)
            if cfg.bi_rnn_baseline:
                self.birnn = BiRNN(d, d // 2, rng, cfg.bi_rnn_baseline)
            elif not cfg.no_bidm:
                self.bidm = DecouplingLayers(d, cfg.n_heads, cfg.d_ff, rng, cfg.dropout)
                if not cfg.mean_pool_fusion:
                    self.moe = MoEFusion(d, rng)
                if cfg.init_mode == "copy_last_encoder_layer":
                    init_copy_last_encoder_layer(self.encoder, self.bidm)
            if cfg.task == "response_selection":
                self.selection = SelectionHead(d, cfg.d_g, rng, use_gru=not cfg.no_bigru)
            elif cfg.task == "extractive_qa":
                self.span = SpanHead(d, rng)
            else:
                self.decoder = Decoder(self.encoder.embeddings.token, cfg.max_target_len, d,
                                       cfg.dec_heads, cfg.dec_layers, cfg.d_ff, rng)

    @property
    def config(self) -> ModelConfig:
        return self._cfg

    @property
    def dtype(self):
        return self._dtype

    def set_dropout_rng(self, rng: np.random.Generator | None) -> None:
        for m in self.modules():
            if hasattr(m, "_rng"):
                m._rng = rng

    # -- shared trunk ----------------------------------------------------------
    def represent(self, batch: Batch, record: bool = False):
        """Fused representation ``H_e`` (B, n, d).

        With ``record`` also returns a dict holding ``H``, the channel outputs,
        per-channel attention weights and the gate tensor, where applicable.
        """
        cfg = self._cfg
        E = self.encoder.embeddings(batch.token_ids, batch.segment_ids, batch.position_ids)
        H = encode(E, self.encoder, batch.key_mask)
        extras = {"H": H}
        if cfg.bi_rnn_baseline:
            H_e, _, _ = self.birnn(H, ~batch.pad)
        elif cfg.no_bidm:
            H_e = H
        else:
            (H_f, H_c, H_p), weights = self.bidm(H, batch.masks, return_weights=True)
            extras.update(H_f2c=H_f, H_c2c=H_c, H_p2c=H_p, attention=weights)
            if cfg.mean_pool_fusion:
                H_e = mean_fuse(H_f, H_c, H_p, batch.masks.valid)
            else:
                H_e, gates = self.moe(H, H_f, H_c, H_p, batch.masks.fusion, return_gates=True)
                extras["gates"] = gates
        extras["H_e"] = H_e
        return (H_e, extras) if record else H_e

    # -- task heads --------------------------------------------------------------
    def loss(self, batch: Batch) -> Tensor:
        return self.forward(batch)["loss"]

    def forward(self, batch: Batch) -> dict:
        H_e = self.represent(batch)
        task = self._cfg.task
        if task == "response_selection":
            probs, loss = select_response(H_e, batch.pool, batch.utt_valid, batch.group_size,
                                          batch.labels, self.selection)
            return {"loss": loss, "probs": probs}
        if task == "extractive_qa":
            p_s, p_e, loss = qa_spans(H_e, batch.span_mask(), batch.spans, self.span)
            return {"loss": loss, "p_start": p_s, "p_end": p_e}
        loss = summarize_loss(H_e, batch.key_mask, batch.target_in, batch.target_out,
                              batch.target_mask, self.decoder)
        return {"loss": loss}

    def candidate_scores(self, batch: Batch) -> np.ndarray:
        H_e = self.represent(batch)
        logits = self.selection.scores(H_e, batch.pool, batch.utt_valid)
        return logits.data.reshape(-1, batch.group_size)

    def predict_spans(self, batch: Batch) -> list[tuple[int, int]]:
        H_e = self.represent(batch)
        allowed = batch.span_mask()
        lp_s, lp_e = self.span.log_probs(H_e, allowed)
        return [best_span(lp_s.data[b], lp_e.data[b], allowed[b], self._cfg.max_span)
                for b in range(batch.size)]

    def generate(self, batch: Batch, bos_id: int, eos_id: int, max_len: int | None = None):
        H_e = self.represent(batch)
        return greedy_decode(H_e, batch.key_mask, self.decoder, bos_id, eos_id,
                             max_len or self._cfg.max_target_len - 1)

    def token_accuracy(self, batch: Batch) -> tuple[int, int]:
        """Teacher-forced next-token hits and total target tokens."""
        H_e = self.represent(batch)
        logits = self.decoder.logits(batch.target_in, H_e, batch.key_mask).data
        hit = (np.argmax(logits, axis=-1) == batch.target_out) & batch.target_mask
        return int(hit.sum()), int(batch.target_mask.sum())


__all__ = ["BidenModel", "ModelConfig", "TASKS"]
