"""Dialogue data model, tokenizer, JSONL ingestion and synthetic corpora."""

from .schema import (
    EXTRACTIVE_QA,
    RESPONSE_SELECTION,
    SUMMARIZATION,
    TASK_TYPES,
    DataError,
    Dialogue,
    ExtractiveQA,
    ResponseSelection,
    Summarization,
    TaskSample,
    Utterance,
    dump_jsonl,
    load_jsonl,
    sample_from_dict,
    sample_to_dict,
)
from .synth import SynthConfig, synth_gen
from .tokenizer import (
    TokenizedContext,
    Vocab,
    detokenize,
    encode_target,
    locate_answer,
    split_words,
    tokenize,
)

__all__ = [
    "EXTRACTIVE_QA",
    "RESPONSE_SELECTION",
    "SUMMARIZATION",
    "TASK_TYPES",
    "DataError",
    "Dialogue",
    "ExtractiveQA",
    "ResponseSelection",
    "Summarization",
    "SynthConfig",
    "TaskSample",
    "TokenizedContext",
    "Utterance",
    "Vocab",
    "detokenize",
    "dump_jsonl",
    "encode_target",
    "load_jsonl",
    "locate_answer",
    "sample_from_dict",
    "sample_to_dict",
    "split_words",
    "synth_gen",
    "tokenize",
]
