"""Ingest a small conversation, look at the chunks, and search them."""

# %%
import json
from pathlib import Path

from memloop import build_index, expand_windows, ingest, search

DATA = Path(__file__).parent / "data"
doc = json.loads((DATA / "sample_corpus.json").read_text())

# A small budget so the three sessions split into several chunks.
store = ingest(doc, chunk_budget=40)
print(f"{len(store)} chunks from {len(store.utterances)} turns")
for lo_hi in store.session_index.items():
    print("  session range", lo_hi)

# %%
# Chunks keep their turns whole and carry an image cue when a photo was shared.
for c in store.chunks[:4]:
    flag = " (image)" if c.has_image_cue else ""
    print(f"[{c.index}] {c.token_estimate:>3} tok {c.utterance_ids}{flag}")

# %%
index = build_index(store)
hits = search(index, "Melanie painting sunrise", k=3)
for h in hits:
    print(f"chunk {h.chunk_index} score {h.score:.3f}")
    print(store.render_chunk(h.chunk_index))

# %%
# Widening the best hit by two chunks on each side; overlapping windows merge.
seeds = [h.chunk_index for h in hits]
for span in expand_windows(seeds, 2, len(store)):
    print(f"window {span.lo}-{span.hi}")
