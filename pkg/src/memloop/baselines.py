"""Reference answerers the loop is compared against."""

from __future__ import annotations

from memloop import agents
from memloop.config import LoopConfig
from memloop.corpus import MemoryStore, estimate_tokens
from memloop.controller import render_answer_prompt
from memloop.retrieval import search


def full_context_prompt(store: MemoryStore, question: str, config: LoopConfig = LoopConfig()) -> str:
    """Responder prompt carrying the whole conversation instead of retrieved evidence."""
    evidence = "\n\n".join(store.render_chunk(i) for i in range(len(store)))
    return render_answer_prompt(evidence, question, store, config)


def full_context_tokens(store: MemoryStore, question: str, config: LoopConfig = LoopConfig()) -> int:
    return estimate_tokens(full_context_prompt(store, question, config))


def full_context_answer(store: MemoryStore, question: str, backend, config: LoopConfig = LoopConfig(),
                        calls: list | None = None) -> str:
    prompt = full_context_prompt(store, question, config)
    return agents.call_text(backend, "responder", "responder_" + config.answer_style, prompt,
                            temperature=config.temp_responder, calls=calls).strip()


def naive_rag_answer(index, store: MemoryStore, question: str, backend, config: LoopConfig = LoopConfig(),
                     calls: list | None = None) -> tuple[str, list[int]]:
    """One retrieval, no filtering, no iteration."""
    hits = [h.chunk_index for h in search(index, question, config.top_k)]
    evidence = "\n\n".join(store.render_chunk(i) for i in sorted(hits))
    prompt = render_answer_prompt(evidence, question, store, config)
    text = agents.call_text(backend, "responder", "responder_" + config.answer_style, prompt,
                            temperature=config.temp_responder, calls=calls)
    return text.strip(), hits
