"""Conversation corpus ingestion and the chunked long-term memory store.

A corpus is a list of sessions, each a list of dialogue turns.  Turns are
packed greedily into small, positionally indexed chunks; a turn is never
split across chunks and a chunk never crosses a session boundary.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

DEFAULT_CHUNK_BUDGET = 200
MIN_CHUNK_BUDGET = 16
DEFAULT_MAX_EDGE_PX = 1024
IMAGE_MARKER = "[image: {caption}]"

STORE_FORMAT = "memloop.store"
STORE_VERSION = 1
STORE_FILENAME = "store.v1.jsonl"


class CorpusError(Exception):
    """Base class for ingestion and store errors."""


class SchemaError(CorpusError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class IngestionError(CorpusError):
    pass


class StoreIOError(CorpusError):
    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


class StoreVersionError(CorpusError):
    def __init__(self, path, found):
        super().__init__(
            f"{path}: unsupported store format version {found!r} (expected {STORE_VERSION})"
        )
        self.path = str(path)
        self.found = found


def estimate_tokens(text: str) -> int:
    """Approximate subword token count as ceil(len(text) / 4)."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class ImageRef:
    uri: str
    caption: str | None = None
    max_edge_px: int = DEFAULT_MAX_EDGE_PX

    def __post_init__(self):
        if self.max_edge_px <= 0:
            raise ValueError("max_edge_px must be positive")


@dataclass(frozen=True)
class Utterance:
    dia_id: str
    speaker: str
    text: str
    session: str
    timestamp: str | None = None
    image_ref: ImageRef | None = None

    def line(self) -> str:
        """Text as stored in a chunk: speaker, text and an image marker if any."""
        out = f"{self.speaker}: {self.text}"
        if self.image_ref is not None:
            caption = self.image_ref.caption or "shared image"
            out += " " + IMAGE_MARKER.format(caption=caption)
        return out

    def tokens(self) -> int:
        return estimate_tokens(self.line())


@dataclass(frozen=True)
class Chunk:
    index: int
    utterance_ids: tuple[str, ...]
    text: str
    token_estimate: int
    has_image_cue: bool = False


@dataclass(frozen=True)
class Session:
    session_id: str
    datetime: str | None = None


@dataclass(frozen=True)
class MemoryStore:
    chunks: tuple[Chunk, ...] = ()
    utterances: Mapping[str, Utterance] = field(default_factory=dict)
    session_index: Mapping[str, tuple[int, int]] = field(default_factory=dict)
    sessions: tuple[Session, ...] = ()
    chunk_budget: int = DEFAULT_CHUNK_BUDGET

    def __len__(self) -> int:
        return len(self.chunks)

    def chunk_utterances(self, index: int) -> list[Utterance]:
        return [self.utterances[d] for d in self.chunks[index].utterance_ids]

    def session_of(self, index: int) -> str:
        return self.utterances[self.chunks[index].utterance_ids[0]].session

    def chunk_of(self) -> dict[str, int]:
        """Map each dia_id to the index of the chunk that holds it."""
        return {d: c.index for c in self.chunks for d in c.utterance_ids}

    def render_chunk(self, index: int) -> str:
        """Chunk text with dia_id prefixes and the session date, for prompts."""
        utts = self.chunk_utterances(index)
        stamp = utts[0].timestamp
        head = f"({utts[0].session}" + (f", {stamp})" if stamp else ")")
        lines = [f"{u.dia_id}- {u.line()}" for u in utts]
        return head + "\n" + "\n".join(lines)


def _require(obj: Mapping[str, Any], key: str, path: str, kind=str, optional=False):
    if key not in obj or obj[key] is None:
        if optional:
            return None
        raise SchemaError(f"{path}.{key}", "missing required field")
    value = obj[key]
    if not isinstance(value, kind):
        raise SchemaError(f"{path}.{key}", f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def parse_corpus(doc: Any, max_edge_px: int = DEFAULT_MAX_EDGE_PX) -> tuple[list[Session], list[Utterance]]:
    """Validate a corpus document and flatten it into sessions and utterances."""
    if not isinstance(doc, Mapping):
        raise SchemaError("$", "corpus document must be an object")
    sessions_raw = _require(doc, "sessions", "$", list)
    sessions: list[Session] = []
    utterances: list[Utterance] = []
    seen_sessions: set[str] = set()
    for si, s in enumerate(sessions_raw):
        spath = f"$.sessions[{si}]"
        if not isinstance(s, Mapping):
            raise SchemaError(spath, "session must be an object")
        sid = _require(s, "session_id", spath)
        if sid in seen_sessions:
            raise SchemaError(f"{spath}.session_id", f"duplicate session_id {sid!r}")
        seen_sessions.add(sid)
        when = _require(s, "datetime", spath, optional=True)
        turns = _require(s, "turns", spath, list)
        sessions.append(Session(sid, when))
        for ti, t in enumerate(turns):
            tpath = f"{spath}.turns[{ti}]"
            if not isinstance(t, Mapping):
                raise SchemaError(tpath, "turn must be an object")
            dia_id = _require(t, "dia_id", tpath)
            speaker = _require(t, "speaker", tpath)
            text = " ".join(_require(t, "text", tpath).split())
            if not text:
                raise SchemaError(f"{tpath}.text", "text is empty after whitespace normalization")
            img = _require(t, "img_url", tpath, optional=True)
            caption = _require(t, "caption", tpath, optional=True)
            image_ref = ImageRef(img, caption, max_edge_px) if img else None
            utterances.append(Utterance(dia_id, speaker, text, sid, when, image_ref))
    return sessions, utterances


def ingest(corpus_doc: Any, chunk_budget: int = DEFAULT_CHUNK_BUDGET,
           max_edge_px: int = DEFAULT_MAX_EDGE_PX) -> MemoryStore:
    """Greedily pack corpus turns into chunks of at most ``chunk_budget`` tokens.

    A turn is appended to the open chunk unless that would push the chunk
    over budget, in which case a new chunk starts.  An oversized turn gets a
    chunk of its own.  Session boundaries always close the open chunk.
    """
    if chunk_budget < MIN_CHUNK_BUDGET:
        raise ValueError(f"chunk_budget must be >= {MIN_CHUNK_BUDGET}")
    sessions, utterances = parse_corpus(corpus_doc, max_edge_px)

    by_id: dict[str, Utterance] = {}
    for u in utterances:
        if u.dia_id in by_id:
            raise IngestionError(f"duplicate dia_id {u.dia_id!r}")
        by_id[u.dia_id] = u

    chunks: list[Chunk] = []
    session_index: dict[str, tuple[int, int]] = {}

    def close(group: list[Utterance]):
        chunks.append(Chunk(
            index=len(chunks),
            utterance_ids=tuple(u.dia_id for u in group),
            text="\n".join(u.line() for u in group),
            token_estimate=sum(u.tokens() for u in group),
            has_image_cue=any(u.image_ref is not None for u in group),
        ))

    per_session: dict[str, list[Utterance]] = {s.session_id: [] for s in sessions}
    for u in utterances:
        per_session[u.session].append(u)

    for session in sessions:
        start = len(chunks)
        group: list[Utterance] = []
        used = 0
        for u in per_session[session.session_id]:
            cost = u.tokens()
            if group and used + cost > chunk_budget:
                close(group)
                group, used = [], 0
            group.append(u)
            used += cost
        if group:
            close(group)
        if len(chunks) > start:
            session_index[session.session_id] = (start, len(chunks))

    return MemoryStore(tuple(chunks), by_id, session_index, tuple(sessions), chunk_budget)


def load_corpus(path) -> dict:
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise StoreIOError(path, "corpus file not found") from None
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON in {path}: {exc}") from None


def _utterance_record(u: Utterance) -> dict:
    rec = {"kind": "utterance", "dia_id": u.dia_id, "speaker": u.speaker, "text": u.text,
           "session": u.session, "timestamp": u.timestamp}
    if u.image_ref is not None:
        rec["image"] = {"uri": u.image_ref.uri, "caption": u.image_ref.caption,
                        "max_edge_px": u.image_ref.max_edge_px}
    return rec


def save_store(store: MemoryStore, path) -> None:
    """Write ``store`` as a versioned line-delimited JSON file."""
    path = Path(path)
    lines: list[dict] = [{
        "format": STORE_FORMAT, "version": STORE_VERSION,
        "chunk_budget": store.chunk_budget, "n_chunks": len(store.chunks),
        "n_utterances": len(store.utterances),
    }]
    for s in store.sessions:
        lo_hi = store.session_index.get(s.session_id)
        lines.append({"kind": "session", "session_id": s.session_id, "datetime": s.datetime,
                      "range": list(lo_hi) if lo_hi else None})
    lines.extend(_utterance_record(u) for u in store.utterances.values())
    for c in store.chunks:
        lines.append({"kind": "chunk", "index": c.index, "utterance_ids": list(c.utterance_ids),
                      "text": c.text, "token_estimate": c.token_estimate,
                      "has_image_cue": c.has_image_cue})
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with tmp.open("w", encoding="utf-8") as fh:
            for rec in lines:
                fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise StoreIOError(path, f"cannot write store: {exc}") from exc


def load_store(path) -> MemoryStore:
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            raw = [json.loads(line) for line in fh if line.strip()]
    except FileNotFoundError:
        raise StoreIOError(path, "store file not found") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise StoreIOError(path, f"cannot read store: {exc}") from exc
    if not raw or raw[0].get("format") != STORE_FORMAT:
        raise StoreIOError(path, "not a memory store file")
    if raw[0].get("version") != STORE_VERSION:
        raise StoreVersionError(path, raw[0].get("version"))

    sessions, session_index, utterances, chunks = [], {}, {}, []
    for rec in raw[1:]:
        kind = rec.get("kind")
        if kind == "session":
            sessions.append(Session(rec["session_id"], rec["datetime"]))
            if rec["range"] is not None:
                session_index[rec["session_id"]] = tuple(rec["range"])
        elif kind == "utterance":
            img = rec.get("image")
            image_ref = ImageRef(img["uri"], img["caption"], img["max_edge_px"]) if img else None
            utterances[rec["dia_id"]] = Utterance(
                rec["dia_id"], rec["speaker"], rec["text"], rec["session"], rec["timestamp"], image_ref)
        elif kind == "chunk":
            chunks.append(Chunk(rec["index"], tuple(rec["utterance_ids"]), rec["text"],
                                rec["token_estimate"], rec["has_image_cue"]))
        else:
            raise StoreIOError(path, f"unknown record kind {kind!r}")
    chunks.sort(key=lambda c: c.index)
    return MemoryStore(tuple(chunks), utterances, session_index, tuple(sessions),
                       raw[0].get("chunk_budget", DEFAULT_CHUNK_BUDGET))
