"""Multi-view reading of long-term memory for one sub-query.

``zoom_in`` ranks the top-K chunks and lets a filter agent keep the useful
ones.  ``zoom_out`` widens each kept chunk to its positional neighbourhood
and lets a second agent judge the widened windows.  ``visual_ground`` runs
only when a selected chunk carries an image cue and asks a vision model
which dialogue entries of those sessions matter.  ``perceive`` composes the
three.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from memloop import agents, prompts
from memloop.config import LoopConfig
from memloop.corpus import MemoryStore
from memloop.llm.base import BackendError, as_backends
from memloop.llm.images import image_data_url
from memloop.llm.jsonparse import as_int_ids, as_str_list
from memloop.retrieval import search

logger = logging.getLogger(__name__)

# Errors a single view absorbs; anything else (e.g. a script miss) propagates.
VIEW_ERRORS = (BackendError, ValueError, OSError)


class PerceptionError(Exception):
    def __init__(self, message: str, partial: "PerceptionResult"):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class WindowSpan:
    lo: int
    hi: int  # inclusive

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi:
            raise ValueError(f"invalid span [{self.lo}, {self.hi}]")

    def indices(self) -> range:
        return range(self.lo, self.hi + 1)


@dataclass(frozen=True)
class ViewResult:
    useful: tuple = ()
    missing: str = ""
    shown: tuple = ()
    scores: tuple[float, ...] = ()
    dropped: int = 0
    reply: dict | None = None
    error: str | None = None


@dataclass(frozen=True)
class PerceptionResult:
    zoom_in: tuple[int, ...] = ()
    zoom_out: tuple[int, ...] = ()
    visual: tuple[str, ...] = ()
    missing_information: str = ""
    raw_candidates: tuple[int, ...] = ()
    candidate_scores: tuple[float, ...] = ()
    spans: tuple[WindowSpan, ...] = ()
    dropped_ids: int = 0
    notes: tuple[str, ...] = ()
    replies: dict = field(default_factory=dict)

    @property
    def chunks(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.zoom_in) | set(self.zoom_out)))


def _query_information(q: str) -> str:
    return f"Query: {q}"


def _known_information(known: str) -> str:
    return "Known information:\n" + known if known else "Known information: none yet."


def _ids_in_range(value, n: int, base: int) -> tuple[list[int], int]:
    """Map display ids (``base``-offset) to 0-based positions below ``n``."""
    ids, dropped = as_int_ids(value)
    kept: list[int] = []
    for d in ids:
        pos = d - base
        if 0 <= pos < n and pos not in kept:
            kept.append(pos)
        else:
            dropped += 1
    return kept, dropped


def zoom_in(index, store: MemoryStore, q: str, k: int, backend, temperature: float = 1.0,
            known: str = "", *, step: int = 0, run_id: str = "", calls: list | None = None,
            prompt_dir=None, max_tokens: int | None = None) -> ViewResult:
    """Top-``k`` search for ``q`` filtered by the zoom-in agent (1-based ids)."""
    hits = search(index, q, k)
    shown = tuple(h.chunk_index for h in hits)
    scores = tuple(h.score for h in hits)
    if not hits:
        return ViewResult(shown=shown, scores=scores, missing="no retrieval results")
    rag = "\n\n".join(f"[{d}] {store.render_chunk(i)}" for d, i in enumerate(shown, start=1))
    prompt = prompts.render("zoom_in", prompt_dir, query_information=_query_information(q),
                            known_information=_known_information(known), rag_results_text=rag)
    reply = agents.call_json(backend, "zoom_in", "zoom_in", prompt, temperature=temperature,
                             step=step, run_id=run_id, calls=calls, max_tokens=max_tokens)
    positions, dropped = _ids_in_range(reply.get("useful_ids"), len(shown), base=1)
    if dropped:
        logger.warning("zoom-in dropped %d invalid ids", dropped)
    useful = tuple(sorted(shown[p] for p in positions))
    return ViewResult(useful, str(reply.get("missing_information") or ""), shown, scores, dropped, reply)


def expand_windows(seeds, w: int, store_size: int) -> list[WindowSpan]:
    """Widen each seed by ``w`` on both sides, clip, and merge touching spans."""
    if w < 0:
        raise ValueError("w must be >= 0")
    spans: list[WindowSpan] = []
    for s in sorted(set(seeds)):
        if not 0 <= s < store_size:
            raise ValueError(f"seed {s} outside store of size {store_size}")
        lo, hi = max(0, s - w), min(store_size - 1, s + w)
        if spans and lo <= spans[-1].hi + 1:
            spans[-1] = WindowSpan(spans[-1].lo, max(spans[-1].hi, hi))
        else:
            spans.append(WindowSpan(lo, hi))
    return spans


def _render_window(store: MemoryStore, span: WindowSpan) -> str:
    return "\n".join(store.render_chunk(i) for i in span.indices())


def zoom_out(store: MemoryStore, spans, q: str, known: str, backend, temperature: float = 1.0, *,
             step: int = 0, run_id: str = "", calls: list | None = None, prompt_dir=None,
             max_tokens: int | None = None) -> ViewResult:
    """Let the zoom-out agent pick useful context windows (0-based ids)."""
    spans = tuple(spans)
    for s in spans:
        if s.hi >= len(store):
            raise ValueError(f"span [{s.lo}, {s.hi}] outside store of size {len(store)}")
    if not spans:
        return ViewResult()
    body = "\n\n".join(f"Context window [{d}] (chunks {s.lo}-{s.hi}):\n{_render_window(store, s)}"
                       for d, s in enumerate(spans))
    prompt = prompts.render("zoom_out", prompt_dir, query_information=_query_information(q),
                            known_information=_known_information(known),
                            middle_context_text="Context windows:\n" + body)
    reply = agents.call_json(backend, "zoom_out", "zoom_out", prompt, temperature=temperature,
                             step=step, run_id=run_id, calls=calls, max_tokens=max_tokens)
    positions, dropped = _ids_in_range(reply.get("useful_ids"), len(spans), base=0)
    useful = tuple(sorted({i for p in positions for i in spans[p].indices()}))
    return ViewResult(useful, str(reply.get("missing_information") or ""), spans, (), dropped, reply)


def image_cue_chunks(store: MemoryStore, chunk_indices, cue_pattern: str | None = None) -> list[int]:
    pattern = re.compile(cue_pattern) if cue_pattern else None
    return [i for i in chunk_indices
            if store.chunks[i].has_image_cue or (pattern is not None and pattern.search(store.chunks[i].text))]


def visual_ground(store: MemoryStore, cue_chunks, q: str, known: str, backend, temperature: float = 1.0, *,
                  step: int = 0, run_id: str = "", calls: list | None = None, prompt_dir=None,
                  image_dir=None, max_tokens: int | None = None) -> ViewResult:
    """Show the cue chunks' sessions, images attached, to a vision-capable agent."""
    sessions = []
    for i in cue_chunks:
        s = store.session_of(i)
        if s not in sessions:
            sessions.append(s)
    order = {d: n for n, d in enumerate(d for c in store.chunks for d in c.utterance_ids)}
    utts = sorted((u for u in store.utterances.values() if u.session in sessions),
                  key=lambda u: order.get(u.dia_id, 0))
    images, notes = [], []
    for u in utts:
        if u.image_ref is None:
            continue
        try:
            images.append(image_data_url(u.image_ref, image_dir))
        except (OSError, ValueError) as exc:
            notes.append(f"image {u.image_ref.uri} unreadable: {exc}")
    dialogue = "\n".join(f"{u.dia_id}- {u.line()}" for u in utts)
    prompt = prompts.render("visual", prompt_dir, query_information=_query_information(q),
                            known_information=_known_information(known),
                            rag_information="Dialogue text of these sessions:\n" + dialogue,
                            session_list_str=", ".join(sessions))
    reply = agents.call_json(backend, "visual", "visual", prompt, temperature=temperature, step=step,
                             run_id=run_id, calls=calls, images=tuple(images), max_tokens=max_tokens)
    ids = as_str_list(reply.get("useful_dia_ids"))
    kept = sorted({d for d in ids if d in store.utterances}, key=lambda d: order.get(d, 0))
    dropped = len(ids) - len([d for d in ids if d in store.utterances])
    return ViewResult(tuple(kept), "", tuple(sessions), (), dropped, reply, "; ".join(notes) or None)


def perceive(q: str, config: LoopConfig, store: MemoryStore, index, backend, known: str = "", *,
             step: int = 0, run_id: str = "", calls: list | None = None, image_dir=None) -> PerceptionResult:
    """Zoom-in, then zoom-out around what it kept, then visual grounding on cues.

    A view that errors contributes nothing.  Raises :class:`PerceptionError`
    (carrying the partial result) only if every view that ran failed.
    """
    backends = as_backends(backend)
    perception = backends.for_role("perception")
    common = dict(step=step, run_id=run_id, calls=calls, prompt_dir=config.prompt_dir,
                  max_tokens=config.max_tokens)
    notes: list[str] = []
    replies: dict = {}
    ran = failed = 0

    zi = ViewResult()
    ran += 1
    try:
        zi = zoom_in(index, store, q, config.top_k, perception, config.temp_perception, known, **common)
        replies["zoom_in"] = zi.reply
    except VIEW_ERRORS as exc:
        failed += 1
        notes.append(f"zoom_in failed: {exc}")
        # keep the candidates in the trace even though the filter failed
        try:
            hits = search(index, q, config.top_k)
            zi = ViewResult(shown=tuple(h.chunk_index for h in hits), scores=tuple(h.score for h in hits))
        except VIEW_ERRORS:
            pass

    spans = expand_windows(zi.useful, config.window_w, len(store)) if zi.useful else []
    zo = ViewResult()
    if spans:
        ran += 1
        try:
            zo = zoom_out(store, spans, q, known, perception, config.temp_perception, **common)
            replies["zoom_out"] = zo.reply
        except VIEW_ERRORS as exc:
            failed += 1
            notes.append(f"zoom_out failed: {exc}")

    vis = ViewResult()
    selected = sorted(set(zi.useful) | set(zo.useful))
    cues = image_cue_chunks(store, selected, config.cue_pattern)
    if cues:
        vision = backends.for_role("vision")
        if not config.vision_enabled or not vision.supports_vision:
            notes.append("vision skipped")
        else:
            ran += 1
            try:
                vis = visual_ground(store, cues, q, known, vision, config.temp_perception,
                                    image_dir=image_dir, **common)
                replies["visual"] = vis.reply
                if vis.error:
                    notes.append(vis.error)
            except VIEW_ERRORS as exc:
                failed += 1
                notes.append(f"visual failed: {exc}")

    missing = "\n".join(m for m in (zi.missing, zo.missing) if m)
    result = PerceptionResult(
        zoom_in=tuple(zi.useful), zoom_out=tuple(zo.useful), visual=tuple(vis.useful),
        missing_information=missing, raw_candidates=tuple(zi.shown), candidate_scores=tuple(zi.scores),
        spans=tuple(spans), dropped_ids=zi.dropped + zo.dropped + vis.dropped,
        notes=tuple(notes), replies=replies,
    )
    if failed and failed == ran:
        raise PerceptionError("; ".join(notes), result)
    return result
