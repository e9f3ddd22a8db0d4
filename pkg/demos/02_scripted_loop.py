"""Walk through the loop with scripted agents standing in for a model.

The judge first splits the question into two sub-queries, then says the
memory is enough.  The printout follows what each iteration read and kept.
"""

# %%
import json
import re
from pathlib import Path

from memloop import LoopConfig, build_index, ingest, run
from memloop.llm import Rule, ScriptedBackend

DATA = Path(__file__).parent / "data"
store = ingest(json.loads((DATA / "sample_corpus.json").read_text()), chunk_budget=40)
index = build_index(store)


def keep_all(req):
    # every block the agent is shown carries a "[d]" marker
    ids = [int(d) for d in re.findall(r"^\[(\d+)\] \(", req.prompt_text, re.M)]
    return {"thinking": "", "missing_information": "", "useful_ids": ids}


def judge(step):
    plan = {1: ["Melanie painted lake sunrise"], 2: ["Melanie camping beach kids"]}
    if step in plan:
        return {"thinking": "need both facts", "can_answer": False, "action": "Break",
                "new_queries": plan[step]}
    return {"thinking": "enough", "can_answer": True, "action": "none", "new_queries": []}


backend = ScriptedBackend([
    Rule("zoom_in", keep_all),
    Rule("zoom_out", {"useful_ids": [0]}),
    *[Rule("judge", judge(s), step=s) for s in (1, 2, 3)],
    Rule("responder", "She painted a lake sunrise and went camping at the beach in early June 2023."),
])

# %%
answer, trace = run("What did Melanie paint, and when did she go camping?", store, index,
                    LoopConfig(top_k=3, window_w=1), backend, query_id="demo")
for it in trace.iterations:
    p = it["perception"]
    print(f"step {it['iteration']} [{it['query_action']}] {it['query']}")
    print(f"   candidates {p['candidates']} kept {p['zoom_in']} windows {p['spans']}")
    print(f"   new evidence {it['new_evidence']}  can_answer={it['verdict']['can_answer']}")

# %%
print(answer.text)
print("evidence:", ", ".join(answer.supporting_dia_ids))
print("terminated by", answer.terminated_by, "after", answer.iterations_used, "steps")
print("tokens per agent:", {t: c.total_tokens for t, c in answer.token_usage.per_tag.items()})
