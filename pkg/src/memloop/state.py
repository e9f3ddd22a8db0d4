"""Short-term memory carried across loop iterations.

The state holds accepted evidence (chunks and visually grounded dialogue
ids), an append-only trajectory of per-iteration records, and the queue of
queries that failed to yield an answer.  Every operation returns a new
value; nothing is evicted.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

from memloop.corpus import MemoryStore, estimate_tokens
from memloop.perception import PerceptionResult

DEFAULT_KNOWN_BUDGET = 4000


@dataclass(frozen=True)
class SemanticMemory:
    evidence: tuple[int, ...] = ()
    visual_evidence: tuple[str, ...] = ()
    first_seen: Mapping[int, int] = field(default_factory=dict)
    visual_first_seen: Mapping[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class TrajectoryRecord:
    iteration: int
    query: str
    zoom_in_count: int
    zoom_out_count: int
    visual_count: int
    missing_information: str
    new_evidence: tuple[int, ...] = ()
    new_visual: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()
    verdict: Mapping | None = None

    def summary(self) -> str:
        line = (f"Step {self.iteration}: searched {self.query!r}; kept {self.zoom_in_count} focal, "
                f"{self.zoom_out_count} context, {self.visual_count} visual; "
                f"{len(self.new_evidence) + len(self.new_visual)} new.")
        if self.missing_information:
            line += f" Missing: {self.missing_information}"
        if self.verdict:
            line += f" Judge: can_answer={self.verdict.get('can_answer')}, action={self.verdict.get('action')}."
        return line


@dataclass(frozen=True)
class ShortTermMemory:
    semantic: SemanticMemory = field(default_factory=SemanticMemory)
    trajectory: tuple[TrajectoryRecord, ...] = ()
    failed_queries: tuple[str, ...] = ()

    @property
    def iteration(self) -> int:
        return len(self.trajectory)


def evolve(prev: ShortTermMemory, perceived: PerceptionResult, q: str, j: int) -> ShortTermMemory:
    """Fold one perception result into the state as iteration ``j``."""
    if j != len(prev.trajectory) + 1:
        raise ValueError(f"iteration {j} does not follow {len(prev.trajectory)}")
    sem = prev.semantic
    have = set(sem.evidence)
    new_chunks = tuple(i for i in sorted(set(perceived.chunks)) if i not in have)
    have_vis = set(sem.visual_evidence)
    new_vis = tuple(d for d in dict.fromkeys(perceived.visual) if d not in have_vis)
    semantic = SemanticMemory(
        evidence=sem.evidence + new_chunks,
        visual_evidence=sem.visual_evidence + new_vis,
        first_seen={**sem.first_seen, **{i: j for i in new_chunks}},
        visual_first_seen={**sem.visual_first_seen, **{d: j for d in new_vis}},
    )
    record = TrajectoryRecord(
        iteration=j, query=q,
        zoom_in_count=len(perceived.zoom_in), zoom_out_count=len(perceived.zoom_out),
        visual_count=len(perceived.visual), missing_information=perceived.missing_information,
        new_evidence=new_chunks, new_visual=new_vis, notes=perceived.notes,
    )
    return ShortTermMemory(semantic, prev.trajectory + (record,), prev.failed_queries)


def annotate_verdict(state: ShortTermMemory, verdict: Mapping) -> ShortTermMemory:
    """Attach the judge's verdict summary to the latest, still unjudged record."""
    last = state.trajectory[-1]
    if last.verdict is not None:
        raise ValueError(f"iteration {last.iteration} already carries a verdict")
    return replace(state, trajectory=state.trajectory[:-1] + (replace(last, verdict=dict(verdict)),))


def record_failure(state: ShortTermMemory, q: str) -> ShortTermMemory:
    if q in state.failed_queries:
        return state
    return replace(state, failed_queries=state.failed_queries + (q,))


def render_known(state: ShortTermMemory, store: MemoryStore, budget: int = DEFAULT_KNOWN_BUDGET) -> str:
    """Serialize accepted evidence for prompts, within ``budget`` estimated tokens.

    Chunks appear in ascending index order with dia_id-prefixed lines;
    whole chunks are dropped from the end once the budget is reached.
    Visually grounded entries follow the chunks.
    """
    blocks = [store.render_chunk(i) for i in sorted(state.semantic.evidence)]
    vis_lines = [f"{d}- {store.utterances[d].line()}" for d in state.semantic.visual_evidence
                 if d in store.utterances]
    if vis_lines:
        blocks.append("Visual evidence:\n" + "\n".join(vis_lines))
    kept: list[str] = []
    used = 0
    for b in blocks:
        cost = estimate_tokens(b)
        if used + cost > budget:
            break
        kept.append(b)
        used += cost
    omitted = len(blocks) - len(kept)
    text = "\n\n".join(kept)
    if omitted:
        text += ("\n" if text else "") + f"…{omitted} chunks omitted"
    return text
