"""Client for OpenAI-compatible chat-completions and embeddings endpoints."""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Sequence

import requests

from memloop.corpus import estimate_tokens
from memloop.llm.base import Backend, BackendError, ChatRequest, ContextOverflowError
from memloop.llm.usage import TokenUsage

logger = logging.getLogger(__name__)

RETRY_STATUS = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class Endpoint:
    base_url: str
    model: str
    api_key: str = ""

    @classmethod
    def from_env(cls, role: str = "", base_url: str | None = None, model: str | None = None,
                 api_key_env: str | None = None) -> "Endpoint":
        """Resolve an endpoint for ``role`` from explicit values and the environment.

        Lookup order per field: explicit argument, ``MEMLOOP_<ROLE>_*``,
        ``MEMLOOP_*``, then ``OPENAI_*``.
        """
        def env(name: str) -> str:
            keys = [f"MEMLOOP_{role.upper()}_{name}"] if role else []
            keys += [f"MEMLOOP_{name}", f"OPENAI_{name}"]
            for k in keys:
                if os.environ.get(k):
                    return os.environ[k]
            return ""

        key = os.environ.get(api_key_env, "") if api_key_env else env("API_KEY")
        return cls(base_url or env("BASE_URL"), model or env("MODEL"), key)


class HTTPBackend(Backend):
    name = "http"

    def __init__(self, endpoint: Endpoint, supports_vision: bool = False, timeout: float = 60.0,
                 max_retries: int = 3, backoff: float = 1.0, max_context_tokens: int | None = None,
                 session: requests.Session | None = None):
        if not endpoint.base_url or not endpoint.model:
            raise BackendError("HTTP backend needs a base URL and a model name")
        self.endpoint = endpoint
        self.supports_vision = supports_vision
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_context_tokens = max_context_tokens
        self.session = session or requests.Session()
        self.retries = 0
        self._lock = threading.Lock()

    def _url(self, path: str) -> str:
        return self.endpoint.base_url.rstrip("/") + path

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.endpoint.api_key:
            headers["Authorization"] = f"Bearer {self.endpoint.api_key}"
        return headers

    def _post(self, path: str, body: dict, sent_tokens: int) -> tuple[dict, int]:
        """POST with bounded retries; returns (json, tokens spent on failed attempts)."""
        wasted = 0
        last = ""
        status = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                with self._lock:
                    self.retries += 1
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.session.post(self._url(path), json=body, headers=self._headers(),
                                         timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last, status = f"transport error: {exc}", None
                wasted += sent_tokens
                logger.warning("%s attempt %d failed: %s", path, attempt + 1, last)
                continue
            if resp.status_code in RETRY_STATUS:
                last, status = resp.text[:500], resp.status_code
                wasted += sent_tokens
                logger.warning("%s attempt %d got HTTP %d", path, attempt + 1, status)
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code} from {path}", resp.status_code, resp.text[:500])
            try:
                return resp.json(), wasted
            except ValueError:
                raise BackendError(f"non-JSON response from {path}", resp.status_code, resp.text[:500]) from None
        raise BackendError(f"{path} failed after {self.max_retries + 1} attempts", status, last)

    def chat(self, req: ChatRequest) -> tuple[str, TokenUsage]:
        if req.has_images and not self.supports_vision:
            raise BackendError("request carries images but backend has no vision capability")
        sent = estimate_tokens(req.prompt_text)
        if self.max_context_tokens is not None and sent > self.max_context_tokens:
            raise ContextOverflowError(
                f"prompt of ~{sent} tokens exceeds the {self.max_context_tokens}-token context limit")
        messages = []
        for m in req.messages:
            if m.images:
                parts = [{"type": "text", "text": m.content}]
                parts += [{"type": "image_url", "image_url": {"url": u}} for u in m.images]
                messages.append({"role": m.role, "content": parts})
            else:
                messages.append({"role": m.role, "content": m.content})
        body = {"model": self.endpoint.model, "messages": messages, "temperature": req.temperature}
        if req.max_tokens is not None:
            body["max_tokens"] = req.max_tokens
        data, wasted = self._post("/chat/completions", body, sent)
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise BackendError("malformed chat-completions response", None, str(data)[:500]) from None
        usage = data.get("usage") or {}
        prompt = usage.get("prompt_tokens")
        completion = usage.get("completion_tokens")
        if prompt is None or completion is None:
            prompt, completion = sent, estimate_tokens(text)
        return text, TokenUsage(int(prompt) + wasted, int(completion))

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            return []
        body = {"model": self.endpoint.model, "input": list(texts)}
        data, _ = self._post("/embeddings", body, sum(estimate_tokens(t) for t in texts))
        try:
            rows = sorted(data["data"], key=lambda r: r.get("index", 0))
            return [list(map(float, r["embedding"])) for r in rows]
        except (KeyError, TypeError, ValueError):
            raise BackendError("malformed embeddings response", None, str(data)[:500]) from None
