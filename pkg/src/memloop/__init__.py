"""Iterative memory-driven retrieval and reasoning over long conversations."""

from memloop.config import LoopConfig
from memloop.controller import Answer, JudgeVerdict, QueryState, Trace, apply_action, judge, respond, run
from memloop.corpus import (
    Chunk,
    ImageRef,
    MemoryStore,
    Utterance,
    estimate_tokens,
    ingest,
    load_store,
    save_store,
)
from memloop.metrics import EvalItem, EvalReport, aggregate, chunk_distance_profile, f1, recall
from memloop.perception import (
    PerceptionResult,
    WindowSpan,
    expand_windows,
    perceive,
    visual_ground,
    zoom_in,
    zoom_out,
)
from memloop.retrieval import Embedding, Lexical, RetrievalHit, build_index, search
from memloop.state import ShortTermMemory, evolve, record_failure, render_known

__version__ = "0.1.0"
