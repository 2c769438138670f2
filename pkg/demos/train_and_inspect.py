"""Train a small model on the synthetic response-selection task and look
inside it.

The task: every utterance carries one keyword and the right response echoes
the keyword of the last turn. Distractors echo keywords from earlier turns
of the same speaker, so a model has to know *which* earlier turn is the
latest one. That is the kind of ordering signal the past and future
channels expose directly.

Usage::

    python demos/train_and_inspect.py [--size 1500] [--epochs 2]

Takes a couple of minutes on a laptop CPU at the default size.
"""

import argparse
import tempfile

import numpy as np

from biden.data import synth_gen
from biden.harness.checkpoint import load_checkpoint
from biden.harness.config import Config
from biden.harness.export import attention_record
from biden.harness.train import evaluate, train

parser = argparse.ArgumentParser()
parser.add_argument("--size", type=int, default=1500)
parser.add_argument("--epochs", type=int, default=2)
args = parser.parse_args()

train_set = synth_gen("a", args.size, seed=1000)
dev_set = synth_gen("a", max(200, args.size // 5), seed=2000)

example = dev_set[0]
print("history:")
for u in example.dialogue.utterances:
    print(f"  {u.speaker}: {u.text}")
print("candidates:", list(example.task.candidates), "gold:", example.task.label)

out = tempfile.mkdtemp(prefix="biden-demo-")
cfg = Config(task="a", d=64, d_ff=128, epochs=args.epochs, out_dir=out)
result = train(cfg, train_set, dev_set)
for h in result.history:
    print(f"epoch {h['epoch']}: loss {h['loss']:.3f}  dev R@1 {h['dev']['R@1']:.3f}")

report = evaluate(result.checkpoint_path, dev_set)
print("reloaded checkpoint:", {k: round(v, 3) for k, v in report.metrics.items()})

# Where does the fused representation of the response look?
rec = attention_record(load_checkpoint(result.checkpoint_path), example)
tokens = rec["tokens"]
last = len(rec["utterance_bounds"]) - 1
start, end = rec["utterance_bounds"][last]
p2c = np.mean(rec["channels"]["p2c"]["heads"], axis=0)  # average over heads
print("\np2c attention from the response tokens, summed per history token:")
weights = p2c[start:end].sum(axis=0)
for i in np.argsort(-weights)[:5]:
    print(f"  {tokens[i]:>10}  utterance {rec['utterance_index'][i]}  {weights[i]:.3f}")

gates = np.array(rec["gates"])
print("\nmean gate weights (f2c, c2c, p2c) on the response tokens:",
      np.round(gates[start:end].mean(axis=0), 3).tolist())
