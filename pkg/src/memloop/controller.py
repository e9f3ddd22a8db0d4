"""The iterative memory-reasoning loop.

Each iteration perceives long-term memory for the current sub-query, folds
the result into short-term memory, and asks a judge whether the root
question can be answered.  If not, the judge's rewritten query (a
decomposed or pruned form) drives the next iteration.  After at most J
iterations a responder answers from the accumulated evidence.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from memloop import agents, prompts
from memloop.config import LoopConfig
from memloop.corpus import MemoryStore
from memloop.llm.base import BackendError, as_backends
from memloop.llm.jsonparse import as_bool, as_str_list
from memloop.llm.usage import TokenUsage, meter
from memloop.perception import PerceptionError, PerceptionResult, perceive
from memloop.state import (
    ShortTermMemory,
    annotate_verdict,
    evolve,
    record_failure,
    render_known,
)

logger = logging.getLogger(__name__)

ACTIONS = ("Break", "Delete", "none")
JUDGE_SUFFICIENT = "judge_sufficient"
ITERATION_CAP = "iteration_cap"

TRACE_FORMAT = "memloop.trace"
TRACE_VERSION = 1

THINKING_FIELD = ("thinking: Reason briefly about whether the short memory answers the query "
                  "and what evidence is still missing.")


class RunError(Exception):
    """The run could not produce an answer; ``trace`` holds what was done."""

    def __init__(self, message: str, trace: "Trace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class QueryState:
    root: str
    current: str
    history: tuple[tuple[str, str], ...]
    exhausted: bool = False

    @classmethod
    def start(cls, question: str) -> "QueryState":
        return cls(question, question, ((question, "init"),))

    @property
    def reset_used(self) -> bool:
        return any(action == "reset" for _, action in self.history)


@dataclass(frozen=True)
class JudgeVerdict:
    thinking: str = ""
    useful_id: tuple[str, ...] = ()
    can_answer: bool = False
    action: str = "none"
    new_queries: tuple[str, ...] = ()
    proposed: tuple[str, ...] = ()
    parse_failed: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> dict:
        return {"can_answer": self.can_answer, "action": self.action, "new_queries": list(self.new_queries)}


@dataclass(frozen=True)
class Answer:
    text: str
    supporting_evidence: tuple[int, ...]
    supporting_dia_ids: tuple[str, ...]
    iterations_used: int
    terminated_by: str
    token_usage: TokenUsage = field(default_factory=TokenUsage)

    def to_dict(self) -> dict:
        return {"text": self.text, "supporting_evidence": list(self.supporting_evidence),
                "supporting_dia_ids": list(self.supporting_dia_ids),
                "iterations_used": self.iterations_used, "terminated_by": self.terminated_by,
                "token_usage": self.token_usage.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Answer":
        return cls(d["text"], tuple(d["supporting_evidence"]), tuple(d["supporting_dia_ids"]),
                   d["iterations_used"], d["terminated_by"], TokenUsage.from_dict(d["token_usage"]))


@dataclass
class Trace:
    query_id: str
    question: str
    config: dict
    iterations: list[dict] = field(default_factory=list)
    query_history: list = field(default_factory=list)
    failed_queries: list = field(default_factory=list)
    answer: dict | None = None
    token_ledger: dict = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return {"format": TRACE_FORMAT, "version": TRACE_VERSION, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def write(self, trace_dir) -> Path:
        path = trace_path(trace_dir, self.query_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path


def trace_path(trace_dir, query_id: str) -> Path:
    safe = re.sub(r"[^\w.:-]+", "_", query_id) or "query"
    return Path(trace_dir) / f"{safe}.v1.json"


def load_trace(path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format") != TRACE_FORMAT or data.get("version") != TRACE_VERSION:
        raise ValueError(f"{path}: not a v{TRACE_VERSION} trace")
    return data


def _norm(q: str) -> str:
    return " ".join(q.split()).casefold()


def _normalize_action(value) -> str:
    if isinstance(value, list):
        value = value[0] if value else ""
    text = str(value or "").strip().lower()
    if text.startswith("break") or text.startswith("decompos"):
        return "Break"
    if text.startswith("delete") or text.startswith("prun"):
        return "Delete"
    return "none"


def parse_verdict(reply: dict, qs: QueryState, failed, queries_num: int) -> JudgeVerdict:
    """Normalize a judge reply; drop new queries that repeat a failed one."""
    can_answer = as_bool(reply.get("can_answer", False))
    proposed = tuple(q.strip() for q in as_str_list(reply.get("new_queries")) if q.strip())
    banned = {_norm(q) for q in failed} | {_norm(qs.current)}
    survivors: list[str] = []
    for q in proposed:
        if _norm(q) not in banned and _norm(q) not in {_norm(s) for s in survivors}:
            survivors.append(q)
    return JudgeVerdict(
        thinking=str(reply.get("thinking") or ""),
        useful_id=tuple(as_str_list(reply.get("useful_id"))),
        can_answer=can_answer,
        action=_normalize_action(reply.get("action")),
        new_queries=() if can_answer else tuple(survivors[:queries_num]),
        proposed=proposed,
    )


def judge(state: ShortTermMemory, qs: QueryState, config: LoopConfig, backend, store: MemoryStore, *,
          step: int = 0, run_id: str = "", calls: list | None = None) -> JudgeVerdict:
    """Ask the judge agent whether memory suffices, and for the next query if not."""
    if not state.trajectory:
        raise ValueError("judge needs at least one trajectory record")
    recent = state.trajectory[-min(config.judge_history, len(state.trajectory)):]
    query = qs.current if qs.current == qs.root else f"{qs.current}\nRoot Query: {qs.root}"
    known = render_known(state, store, config.known_budget)
    prompt = prompts.render(
        "judge", config.prompt_dir, query=query,
        short_memory_text="Short Memory:\n" + (known or "(empty)"),
        conv_memory_text="Recent search trajectory:\n" + "\n".join(r.summary() for r in recent),
        fail_queue_information="Fail query: " + json.dumps(list(state.failed_queries), ensure_ascii=False),
        thinking=THINKING_FIELD, queries_num=config.queries_num,
    )
    try:
        reply = agents.call_json(backend, "judge", "judge", prompt, repair_retries=1,
                                 temperature=config.temp_judge, step=step, run_id=run_id,
                                 calls=calls, max_tokens=config.max_tokens)
    except (BackendError, ValueError) as exc:
        logger.warning("judge failed at step %d: %s", step, exc)
        return JudgeVerdict(parse_failed=True)
    return parse_verdict(reply, qs, state.failed_queries, config.queries_num)


def apply_action(qs: QueryState, verdict: JudgeVerdict) -> QueryState:
    """Move to the judge's next query, or fall back to the root question once."""
    if verdict.can_answer:
        raise ValueError("apply_action called on a sufficient verdict")
    if verdict.new_queries:
        nxt = verdict.new_queries[0]
        return QueryState(qs.root, nxt, qs.history + ((nxt, verdict.action),))
    if not qs.reset_used:
        return QueryState(qs.root, qs.root, qs.history + ((qs.root, "reset"),))
    return QueryState(qs.root, qs.current, qs.history, exhausted=True)


def _evidence_dia_ids(state: ShortTermMemory, store: MemoryStore) -> tuple[str, ...]:
    ids = [d for i in sorted(state.semantic.evidence) for d in store.chunks[i].utterance_ids]
    ids += [d for d in state.semantic.visual_evidence if d not in ids]
    return tuple(ids)


def render_answer_prompt(evidence: str, question: str, store: MemoryStore, config: LoopConfig) -> str:
    name = f"responder_{config.answer_style}"
    current_date = next((s.datetime for s in reversed(store.sessions) if s.datetime), "unknown")
    return prompts.render(name, config.prompt_dir, evidence=evidence or "(no evidence retrieved)",
                          question=question, current_date=current_date)


def respond(state: ShortTermMemory, question: str, store: MemoryStore, backend, temp: float = 1.0, *,
            config: LoopConfig = LoopConfig(), ledger: TokenUsage = TokenUsage(),
            terminated_by: str = JUDGE_SUFFICIENT, step: int = 0, run_id: str = "",
            calls: list | None = None) -> Answer:
    """Answer ``question`` from accumulated evidence; usage adds to ``ledger``."""
    calls = [] if calls is None else calls
    before = len(calls)
    prompt = render_answer_prompt(render_known(state, store, config.known_budget), question, store, config)
    text = agents.call_text(backend, "responder", f"responder_{config.answer_style}", prompt,
                            temperature=temp, step=step, run_id=run_id, calls=calls,
                            max_tokens=config.max_tokens)
    for rec in calls[before:]:
        ledger = meter(ledger, TokenUsage(rec.prompt_tokens, rec.completion_tokens), rec.tag)
    return Answer(text.strip(), tuple(sorted(state.semantic.evidence)), _evidence_dia_ids(state, store),
                  max(1, state.iteration), terminated_by, ledger)


def _perception_dict(p: PerceptionResult) -> dict:
    return {
        "candidates": list(p.raw_candidates), "scores": list(p.candidate_scores),
        "zoom_in": list(p.zoom_in), "spans": [[s.lo, s.hi] for s in p.spans],
        "zoom_out": list(p.zoom_out), "visual": list(p.visual),
        "missing_information": p.missing_information, "dropped_ids": p.dropped_ids,
        "notes": list(p.notes),
    }


def run(question: str, store: MemoryStore, index, config: LoopConfig, backend, *, query_id: str = "",
        image_dir=None) -> tuple[Answer, Trace]:
    """Run the loop for ``question`` and answer it.

    ``backend`` is a single backend or a :class:`~memloop.llm.Backends`
    mapping agent roles to backends.
    """
    backends = as_backends(backend)
    run_id = query_id or question
    trace = Trace(query_id or "query", question, config.to_dict())
    state = ShortTermMemory()
    qs = QueryState.start(question)
    ledger = TokenUsage()
    terminated = ITERATION_CAP

    for j in range(1, config.max_iterations + 1):
        calls: list = []
        known = render_known(state, store, config.known_budget)
        perception_failed = False
        try:
            perceived = perceive(qs.current, config, store, index, backends, known, step=j,
                                 run_id=run_id, calls=calls, image_dir=image_dir)
        except PerceptionError as exc:
            perceived, perception_failed = exc.partial, True
        state = evolve(state, perceived, qs.current, j)
        verdict = judge(state, qs, config, backends.for_role("judge"), store, step=j, run_id=run_id,
                        calls=calls)
        state = annotate_verdict(state, verdict.summary())
        for rec in calls:
            ledger = meter(ledger, TokenUsage(rec.prompt_tokens, rec.completion_tokens), rec.tag)
        trace.iterations.append({
            "iteration": j, "query": qs.current, "query_action": qs.history[-1][1],
            "perception": _perception_dict(perceived), "perception_failed": perception_failed,
            "new_evidence": list(state.trajectory[-1].new_evidence),
            "new_visual": list(state.trajectory[-1].new_visual),
            "evidence": list(state.semantic.evidence), "verdict": verdict.to_dict(),
            "calls": [c.to_dict() for c in calls],
        })
        if verdict.can_answer:
            terminated = JUDGE_SUFFICIENT
            break
        state = record_failure(state, qs.current)
        if j == config.max_iterations:
            break
        qs = apply_action(qs, verdict)
        if qs.exhausted:
            trace.iterations[-1]["note"] = "no unexplored query left; stopping"
            break

    trace.query_history = [list(h) for h in qs.history]
    trace.failed_queries = list(state.failed_queries)
    calls = []
    try:
        answer = respond(state, question, store, backends.for_role("responder"), config.temp_responder,
                         config=config, ledger=ledger, terminated_by=terminated,
                         step=state.iteration, run_id=run_id, calls=calls)
    except BackendError as exc:
        trace.error = f"responder failed: {exc}"
        trace.token_ledger = ledger.to_dict()
        raise RunError(trace.error, trace) from exc
    trace.answer = answer.to_dict()
    trace.answer["calls"] = [c.to_dict() for c in calls]
    trace.token_ledger = answer.token_usage.to_dict()
    return answer, trace
