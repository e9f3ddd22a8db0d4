"""Top-K similarity search over memory chunks.

Two retrievers share one interface: a tf-idf inverted index (cosine
similarity) and a dense index of unit-normalized backend embeddings (dot
product).  Rankings are deterministic: score descending, then chunk index
ascending.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from memloop.corpus import MemoryStore
from memloop.llm.base import Backend, BackendError

DEFAULT_TOP_K = 10
INDEX_FORMAT = "memloop.index"
INDEX_VERSION = 1

_NON_WORD = re.compile(r"[^\w]+", re.UNICODE)


class IndexingError(Exception):
    def __init__(self, message: str, diagnostics: str = ""):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class RetrievalHit:
    chunk_index: int
    score: float


@dataclass(frozen=True)
class Lexical:
    name = "lexical"


@dataclass(frozen=True)
class Embedding:
    provider: str = "default"
    dim: int = 0

    name = "embedding"

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("embedding dim must be positive")


RetrieverKind = Lexical | Embedding


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return _NON_WORD.sub(" ", text.lower()).replace("_", " ").split()


def _rank(scored, k: int) -> list[RetrievalHit]:
    ranked = sorted(scored, key=lambda p: (-p[1], p[0]))
    return [RetrievalHit(i, s) for i, s in ranked[:k]]


@dataclass
class LexicalIndex:
    """Inverted index of l2-normalized tf-idf vectors."""

    size: int
    idf: Mapping[str, float]
    # term -> [(chunk_index, normalized weight)], ascending chunk index
    postings: Mapping[str, list[tuple[int, float]]] = field(default_factory=dict)

    kind = Lexical()

    def query_vector(self, query: str) -> dict[str, float]:
        tf = Counter(t for t in tokenize(query) if t in self.idf)
        vec = {t: c * self.idf[t] for t, c in tf.items()}
        norm = math.sqrt(sum(w * w for w in vec.values()))
        return {t: w / norm for t, w in sorted(vec.items())} if norm else {}

    def doc_vectors(self) -> list[dict[str, float]]:
        docs: list[dict[str, float]] = [{} for _ in range(self.size)]
        for term, plist in self.postings.items():
            for i, w in plist:
                docs[i][term] = w
        return docs

    def score_all(self, query: str) -> dict[int, float]:
        scores: dict[int, float] = {}
        for term, qw in self.query_vector(query).items():
            for i, w in self.postings.get(term, ()):
                scores[i] = scores.get(i, 0.0) + qw * w
        return scores

    def search(self, query: str, k: int) -> list[RetrievalHit]:
        return _rank(((i, s) for i, s in self.score_all(query).items() if s > 0), k)

    def to_dict(self) -> dict:
        return {"kind": "lexical", "size": self.size,
                "idf": dict(sorted(self.idf.items())),
                "postings": {t: [[i, w] for i, w in p] for t, p in sorted(self.postings.items())}}


@dataclass
class EmbeddingIndex:
    kind: Embedding
    vectors: np.ndarray  # (n_chunks, dim), unit rows
    backend: Backend | None = None

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    def embed_query(self, query: str) -> np.ndarray:
        if self.backend is None:
            raise IndexingError("embedding index has no backend attached for queries")
        return _unit(np.asarray(self.backend.embed([query]), dtype=float))[0]

    def search(self, query: str, k: int) -> list[RetrievalHit]:
        if self.size == 0:
            return []
        scores = self.vectors @ self.embed_query(query)
        return _rank(((i, float(s)) for i, s in enumerate(scores)), k)

    def to_dict(self) -> dict:
        return {"kind": "embedding", "provider": self.kind.provider, "dim": self.kind.dim,
                "vectors": self.vectors.tolist()}


RetrievalIndex = LexicalIndex | EmbeddingIndex


def _unit(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return mat / norms


def build_lexical(store: MemoryStore) -> LexicalIndex:
    n = len(store.chunks)
    tfs = [Counter(tokenize(c.text)) for c in store.chunks]
    df = Counter(t for tf in tfs for t in tf)
    # Smoothed idf keeps terms present in every chunk at a positive weight.
    idf = {t: math.log((1 + n) / (1 + d)) + 1.0 for t, d in df.items()}
    postings: dict[str, list[tuple[int, float]]] = {}
    for i, tf in enumerate(tfs):
        vec = {t: c * idf[t] for t, c in tf.items()}
        norm = math.sqrt(sum(w * w for w in vec.values()))
        for t, w in vec.items():
            postings.setdefault(t, []).append((i, w / norm))
    return LexicalIndex(n, idf, postings)


def build_index(store: MemoryStore, kind: RetrieverKind = Lexical(), backend: Backend | None = None):
    """Index every chunk of ``store`` with the retriever ``kind``."""
    if isinstance(kind, Lexical):
        return build_lexical(store)
    if backend is None:
        raise IndexingError("embedding index requires a backend")
    texts = [c.text for c in store.chunks]
    try:
        raw = backend.embed(texts) if texts else []
    except BackendError as exc:
        raise IndexingError(f"embedding backend failed: {exc}", exc.diagnostics) from exc
    mat = np.asarray(raw, dtype=float) if texts else np.zeros((0, kind.dim))
    if mat.ndim != 2 or mat.shape != (len(texts), kind.dim):
        raise IndexingError(f"backend returned vectors of shape {mat.shape}, expected {(len(texts), kind.dim)}")
    return EmbeddingIndex(kind, _unit(mat), backend)


def search(index, query: str, k: int = DEFAULT_TOP_K) -> list[RetrievalHit]:
    """Best ``k`` chunks for ``query``; ties go to the lower chunk index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return index.search(query, k)


def save_index(index, path) -> None:
    payload = {"format": INDEX_FORMAT, "version": INDEX_VERSION, **index.to_dict()}
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_index(path, backend: Backend | None = None):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format") != INDEX_FORMAT or data.get("version") != INDEX_VERSION:
        raise IndexingError(f"{path}: unsupported index format")
    if data["kind"] == "lexical":
        postings = {t: [(int(i), float(w)) for i, w in p] for t, p in data["postings"].items()}
        return LexicalIndex(data["size"], data["idf"], postings)
    kind = Embedding(data["provider"], data["dim"])
    vecs = np.asarray(data["vectors"], dtype=float).reshape(-1, kind.dim)
    return EmbeddingIndex(kind, vecs, backend)
