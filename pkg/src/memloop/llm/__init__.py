from memloop.llm.base import (
    Backend,
    BackendError,
    Backends,
    ChatRequest,
    ContextOverflowError,
    Message,
    ScriptMiss,
    as_backends,
    user_request,
)
from memloop.llm.http import Endpoint, HTTPBackend
from memloop.llm.jsonparse import JSONExtractError, extract_json
from memloop.llm.scripted import Rule, ScriptedBackend, load_script
from memloop.llm.usage import TokenCount, TokenUsage, meter, merge


def chat(backend: Backend, req: ChatRequest):
    """Send ``req`` through ``backend``; returns (text, TokenUsage)."""
    return backend.chat(req)


__all__ = [
    "Backend", "BackendError", "Backends", "ChatRequest", "ContextOverflowError", "Endpoint",
    "HTTPBackend", "JSONExtractError", "Message", "Rule", "ScriptMiss", "ScriptedBackend",
    "TokenCount", "TokenUsage", "as_backends", "chat", "extract_json", "load_script", "merge",
    "meter", "user_request",
]
