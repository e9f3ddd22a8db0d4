"""Corpus builders and scripted agent policies shared by the tests."""

from __future__ import annotations

import hashlib
import json
import random
import re

from memloop.llm import Rule, ScriptedBackend

CANDIDATE = re.compile(r"^\[(\d+)\] \(", re.M)
WINDOW = re.compile(r"^Context window \[(\d+)\]", re.M)

FILLER = ("morning coffee weather traffic meeting lunch email weekend movie dinner "
          "breakfast office walk phone call bus train book music friend family").split()


def corpus_doc(sessions, datetimes=None):
    """Build a corpus document from ``[[(speaker, text) | text, ...], ...]``."""
    out = []
    for si, turns in enumerate(sessions, start=1):
        ts = []
        for ti, t in enumerate(turns, start=1):
            if isinstance(t, dict):
                turn = {"dia_id": f"D{si}:{ti}", **t}
            else:
                speaker, text = t if isinstance(t, tuple) else ("A", t)
                turn = {"dia_id": f"D{si}:{ti}", "speaker": speaker, "text": text}
            ts.append(turn)
        s = {"session_id": f"session_{si}", "turns": ts}
        if datetimes:
            s["datetime"] = datetimes[si - 1]
        out.append(s)
    return {"sessions": out}


def filler_text(rng: random.Random, n_words: int) -> str:
    return " ".join(rng.choice(FILLER) for _ in range(n_words))


def shown_candidates(req) -> list[int]:
    return [int(d) for d in CANDIDATE.findall(req.prompt_text)]


def shown_windows(req) -> list[int]:
    return [int(d) for d in WINDOW.findall(req.prompt_text)]


def candidate_blocks(req) -> dict[int, str]:
    """Display id -> rendered candidate text, from a zoom-in prompt."""
    text = req.prompt_text
    marks = list(CANDIDATE.finditer(text))
    out = {}
    for n, m in enumerate(marks):
        end = marks[n + 1].start() if n + 1 < len(marks) else text.find("\nTask:", m.start())
        out[int(m.group(1))] = text[m.start():end]
    return out


def window_blocks(req) -> dict[int, str]:
    text = req.prompt_text
    marks = list(WINDOW.finditer(text))
    out = {}
    for n, m in enumerate(marks):
        end = marks[n + 1].start() if n + 1 < len(marks) else text.find("\nTask:", m.start())
        out[int(m.group(1))] = text[m.start():end]
    return out


def select_all_zoom_in(req):
    return {"thinking": "all", "missing_information": "", "useful_ids": shown_candidates(req)}


def select_all_zoom_out(req):
    return {"thinking": "all", "thinking_choice": "", "missing_information": "",
            "useful_ids": shown_windows(req)}


def select_containing(keyword_of_run):
    """Zoom-in/zoom-out policy keeping blocks that mention the run's keyword."""
    def zi(req):
        kw = keyword_of_run(req)
        ids = [d for d, b in candidate_blocks(req).items() if kw in b]
        return {"thinking": "", "missing_information": "", "useful_ids": ids}

    def zo(req):
        kw = keyword_of_run(req)
        ids = [d for d, b in window_blocks(req).items() if kw in b]
        return {"thinking": "", "thinking_choice": "", "missing_information": "", "useful_ids": ids}
    return zi, zo


def hashed_subset(ids, req, salt=""):
    """Deterministic pseudo-random subset of ``ids`` keyed on the prompt."""
    h = hashlib.sha256((salt + req.prompt_text).encode()).digest()
    rng = random.Random(h)
    return [i for i in ids if rng.random() < 0.5]


def verdict(can_answer, new_queries=(), action="Break"):
    return json.dumps({"thinking": "", "useful_id": [], "can_answer": can_answer,
                       "action": action, "new_queries": list(new_queries)})


def judge_sequence(replies):
    """Judge rules returning ``replies[j-1]`` at step j."""
    return [Rule("judge", r, step=j) for j, r in enumerate(replies, start=1)]


def loop_backend(judge_rules, zoom_in=select_all_zoom_in, zoom_out=select_all_zoom_out,
                 responder="final answer", **kwargs) -> ScriptedBackend:
    rules = [Rule("zoom_in", zoom_in), Rule("zoom_out", zoom_out), *judge_rules,
             Rule("responder", responder)]
    return ScriptedBackend(rules, **kwargs)
