"""Deterministic stand-in for a language model, driven by a script of rules."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence, Union

from memloop.llm.base import Backend, ChatRequest, ScriptMiss, estimate_usage
from memloop.llm.usage import TokenUsage

Response = Union[str, Mapping[str, Any], Callable[[ChatRequest], Any]]


@dataclass
class Rule:
    """Canned response for calls matching ``tag`` (and optional filters).

    ``step`` of None matches every loop step; ``run_id`` of None matches every
    run; ``contains`` requires a substring of the prompt.  A rule fires at
    most once per (run, step); later calls fall through to later rules.
    """

    tag: str
    response: Response
    step: int | None = None
    run_id: str | None = None
    contains: str | None = None

    def matches(self, req: ChatRequest) -> bool:
        return (self.tag == req.tag
                and (self.step is None or self.step == req.step)
                and (self.run_id is None or self.run_id == req.run_id)
                and (self.contains is None or self.contains in req.prompt_text))


class ScriptedBackend(Backend):
    name = "scripted"

    def __init__(self, script: Sequence[Rule] = (), embed_table: Mapping[str, Sequence[float]] | None = None,
                 embed_fn: Callable[[str], Sequence[float]] | None = None,
                 supports_vision: bool = False):
        self.script = list(script)
        self.embed_table = dict(embed_table or {})
        self.embed_fn = embed_fn
        self.supports_vision = supports_vision
        self.calls: list[ChatRequest] = []
        self._fired: set[tuple[int, str, int]] = set()
        self._lock = threading.Lock()

    def chat(self, req: ChatRequest) -> tuple[str, TokenUsage]:
        with self._lock:
            self.calls.append(req)
            for i, rule in enumerate(self.script):
                key = (i, req.run_id, req.step)
                if key in self._fired or not rule.matches(req):
                    continue
                self._fired.add(key)
                break
            else:
                raise ScriptMiss(f"no script rule for tag={req.tag!r} step={req.step} run={req.run_id!r}")
        response = rule.response
        if callable(response):
            response = response(req)
        text = response if isinstance(response, str) else json.dumps(response)
        return text, estimate_usage(req, text)

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        out = []
        for t in texts:
            if t in self.embed_table:
                out.append(list(self.embed_table[t]))
            elif self.embed_fn is not None:
                out.append(list(self.embed_fn(t)))
            else:
                raise ScriptMiss(f"no embedding scripted for text {t[:40]!r}")
        return out

    def calls_for(self, tag: str) -> list[ChatRequest]:
        return [c for c in self.calls if c.tag == tag]


def load_script(path) -> ScriptedBackend:
    """Build a scripted backend from a JSON file.

    Format: ``{"vision": bool, "rules": [{"tag", "response", "step"?,
    "run_id"?, "contains"?}], "embeddings": {text: [floats]}}``.  A response
    may be a string or a JSON object (sent serialized).
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    rules = [Rule(r["tag"], r["response"], r.get("step"), r.get("run_id"), r.get("contains"))
             for r in data.get("rules", [])]
    return ScriptedBackend(rules, data.get("embeddings"), supports_vision=data.get("vision", False))
