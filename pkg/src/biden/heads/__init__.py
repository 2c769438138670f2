from .qa import SpanHead, best_span, qa_spans
from .rnn import BiRNN, GRUCell, LSTMCell, bi_rnn_baseline
from .selection import SelectionHead, select_response, utterance_max_pool
from .summarization import Decoder, greedy_decode, summarize_loss

__all__ = [
    "BiRNN",
    "Decoder",
    "GRUCell",
    "LSTMCell",
    "SelectionHead",
    "SpanHead",
    "best_span",
    "bi_rnn_baseline",
    "greedy_decode",
    "qa_spans",
    "select_response",
    "summarize_loss",
    "utterance_max_pool",
]
