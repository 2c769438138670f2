"""Binary checkpoints.

Layout::

    b"BIDNCKPT"            8-byte magic
    uint32 LE              format version
    uint32 LE              header length in bytes
    header                 UTF-8 JSON: model config, run config, config hash,
                           parameter manifest (name, shape, offset), vocab
    payload                float32 LE, parameters concatenated in manifest order
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from ..data import Vocab
from ..model import BidenModel, ModelConfig

MAGIC = b"BIDNCKPT"
FORMAT_VERSION = 1
_PAYLOAD = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: BidenModel
    vocab: Vocab
    run_config: dict
    meta: dict

    @property
    def config(self) -> ModelConfig:
        return self.model.config


def config_hash(cfg: ModelConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path: str, model: BidenModel, vocab: Vocab, run_config: dict | None = None,
                    meta: dict | None = None) -> None:
    manifest, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data, dtype=_PAYLOAD)
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.ravel())
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "config_hash": config_hash(model.config),
        "run_config": run_config or {},
        "manifest": manifest,
        "payload_length": offset,
        "vocab": vocab.itos,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.concatenate(chunks) if chunks else np.zeros(0, _PAYLOAD)
    tmp = f"{path}.tmp"
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload.tobytes())
    os.replace(tmp, path)


def read_header(path: str) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        raw = fh.read(8)
        if len(raw) != 8:
            raise CheckpointError(f"{path}: truncated header")
        version, n = struct.unpack("<II", raw)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        header = json.loads(fh.read(n).decode("utf-8"))
    return header, len(MAGIC) + 8 + n


def load_checkpoint(path: str) -> Checkpoint:
    """Rebuild the model in float32 with the stored parameters."""
    header, start = read_header(path)
    cfg = ModelConfig(**header["model_config"])
    if config_hash(cfg) != header["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    payload = np.fromfile(path, dtype=_PAYLOAD, offset=start)
    expected = sum(int(np.prod(e["shape"], dtype=np.int64)) for e in header["manifest"])
    if expected != header["payload_length"] or payload.size != expected:
        raise CheckpointError(
            f"{path}: manifest describes {expected} values but payload holds {payload.size}")
    model = BidenModel(cfg, 0, dtype=np.float32)
    state = {}
    for e in header["manifest"]:
        size = int(np.prod(e["shape"], dtype=np.int64))
        state[e["name"]] = payload[e["offset"]: e["offset"] + size].reshape(e["shape"])
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return Checkpoint(model, Vocab(header["vocab"]), header.get("run_config", {}),
                      header.get("meta", {}))
