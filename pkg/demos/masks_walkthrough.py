"""Walk through how one short dialogue is laid out and masked.

Run with ``python demos/masks_walkthrough.py``. Nothing is trained; the
script prints the token layout, the three utterance-level attention masks
and which channels the fusion gate may use at each position.
"""

from biden.data import Dialogue, Summarization, TaskSample, Utterance, Vocab, tokenize
from biden.masking import CHANNELS, build_decoupling_masks

dialogue = Dialogue("demo", (
    Utterance("A", "are we still on for lunch"),
    Utterance("B", "yes at noon"),
    Utterance("A", "great see you"),
))
sample = TaskSample(dialogue, Summarization(("lunch at noon",)))
ctx = tokenize(sample, Vocab.build([sample]))[0]

print("position  utterance  token")
for i, (tok, u) in enumerate(zip(ctx.tokens, ctx.utterance_index)):
    print(f"{i:>8}  {u:>9}  {tok}")

masks = build_decoupling_masks(ctx.utterance_index)


def show(name):
    grid = masks.channel(name) == 0
    print(f"\n{name}: '#' where row i may attend column j")
    for i, row in enumerate(grid):
        flag = "" if getattr(masks, f"valid_{name}")[i] else "   (no keys: row is zeroed)"
        print("  " + "".join("#" if x else "." for x in row) + flag)


for name in CHANNELS:
    show(name)

# Each (i, j) pair is open in exactly one channel.
open_count = sum((masks.channel(k) == 0).astype(int) for k in CHANNELS)
print("\nevery pair open in exactly one channel:", bool((open_count == 1).all()))

print("\nchannels the gate may mix per utterance (f2c, c2c, p2c):")
for u in range(ctx.num_utterances):
    i = list(ctx.utterance_index).index(u)
    print(f"  utterance {u}:", tuple(bool(v) for v in masks.validity()[i]))
