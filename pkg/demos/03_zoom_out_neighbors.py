"""Why widening around a hit matters.

Each question names a rare keyword that appears in one turn only.  The
actual answer sits a few chunks away and shares no words with the
question, so only the context window around the hit can reach it.
"""

# %%
import random

from memloop import EvalItem, LoopConfig, build_index, ingest
from memloop.harness import run_eval
from memloop.llm import Rule, ScriptedBackend

rng = random.Random(0)
words = "coffee weather traffic lunch email movie dinner office phone train".split()
turns = [" ".join(rng.choice(words) for _ in range(8)).ljust(70, ".") for _ in range(200)]
names = ["quillfeather", "marrowdale", "brightwick", "ossington"]
gold = {}
for n, name in enumerate(names):
    anchor = 30 + 40 * n
    turns[anchor] = f"let me tell you about {name}".ljust(70, ".")
    turns[anchor + n + 1] = f"it was purple and cost nine dollars ({n})".ljust(70, ".")
    gold[name] = f"D1:{anchor + n + 2}"

doc = {"sessions": [{"session_id": "s1", "turns": [
    {"dia_id": f"D1:{i + 1}", "speaker": "A", "text": t} for i, t in enumerate(turns)]}]}
store = ingest(doc, chunk_budget=16)
index = build_index(store)
items = [EvalItem(name, f"What about {name}?", "purple", "single_hop", (gold[name],)) for name in names]

# %%
# The focal filter keeps the chunk naming the keyword; the context agent keeps every window.
import re

MARK = re.compile(r"^\[(\d+)\] \(", re.M)


def focal(req):
    text = req.prompt_text
    marks = list(MARK.finditer(text)) + [None]
    keep = []
    for m, nxt in zip(marks, marks[1:]):
        block = text[m.start():nxt.start() if nxt else len(text)]
        if req.run_id in block.split("\n\nTask:")[0]:
            keep.append(int(m.group(1)))
    return {"useful_ids": keep}


def backend():
    return ScriptedBackend([
        Rule("zoom_in", focal),
        Rule("zoom_out", lambda req: {"useful_ids": list(range(req.prompt_text.count("Context window [")))}),
        Rule("judge", {"can_answer": True}),
        Rule("responder", "purple"),
    ])


for w in (0, 1, 2, 4):
    report, _, _ = run_eval(items, store, index, LoopConfig(window_w=w), backend())
    print(f"W={w}: evidence recall {report.mean_recall:.2f}")
