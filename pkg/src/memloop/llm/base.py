from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from memloop.corpus import estimate_tokens
from memloop.llm.usage import TokenUsage

ROLES = ("system", "user", "assistant")
TAGS = ("zoom_in", "zoom_out", "visual", "judge", "responder")


class BackendError(Exception):
    """A model call failed (transport, HTTP status, exhausted retries...)."""

    def __init__(self, message: str, status: int | None = None, diagnostics: str = ""):
        super().__init__(message)
        self.status = status
        self.diagnostics = diagnostics


class ContextOverflowError(BackendError):
    pass


class ScriptMiss(Exception):
    """A scripted backend received a call no script rule matches.

    Deliberately not a BackendError: the engine tolerates backend failures,
    but an incomplete test script must surface.
    """


@dataclass(frozen=True)
class Message:
    role: str
    content: str
    images: tuple[str, ...] = ()  # image URLs, normally base64 data URLs

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"invalid message role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int | None = None
    tag: str = "responder"
    # Loop position, used by scripted backends and traces.
    step: int = 0
    run_id: str = ""

    @property
    def prompt_text(self) -> str:
        return "\n".join(m.content for m in self.messages)

    @property
    def has_images(self) -> bool:
        return any(m.images for m in self.messages)


def user_request(prompt: str, **kwargs) -> ChatRequest:
    return ChatRequest(messages=(Message("user", prompt),), **kwargs)


def estimate_usage(req: ChatRequest, completion: str) -> TokenUsage:
    return TokenUsage(estimate_tokens(req.prompt_text), estimate_tokens(completion))


class Backend:
    """Interface every model backend implements."""

    supports_vision: bool = False
    name: str = "backend"

    def chat(self, req: ChatRequest) -> tuple[str, TokenUsage]:
        raise NotImplementedError

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        raise BackendError(f"{self.name} does not provide embeddings")


@dataclass
class Backends:
    """One backend per agent role; roles left unset fall back to ``default``."""

    default: Backend
    perception: Backend | None = None
    judge: Backend | None = None
    responder: Backend | None = None
    vision: Backend | None = None
    embedding: Backend | None = None

    def for_role(self, role: str) -> Backend:
        return getattr(self, role, None) or self.default


def as_backends(backend) -> Backends:
    return backend if isinstance(backend, Backends) else Backends(default=backend)
