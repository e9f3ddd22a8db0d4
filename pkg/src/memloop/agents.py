"""One place where agent prompts go out and replies come back."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from memloop import prompts
from memloop.llm.base import Backend, ChatRequest, Message
from memloop.llm.jsonparse import extract_json

REPAIR_NUDGE = "Your previous reply was not valid JSON. Reply again with ONLY the JSON object."


@dataclass(frozen=True)
class CallRecord:
    tag: str
    step: int
    prompt_id: str
    prompt_tokens: int
    completion_tokens: int
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def call_text(backend: Backend, tag: str, template: str, prompt: str, *, temperature: float,
              step: int = 0, run_id: str = "", images: tuple[str, ...] = (),
              max_tokens: int | None = None, calls: list | None = None,
              history: tuple[Message, ...] = ()) -> str:
    """Send one prompt; appends a CallRecord to ``calls`` (errors re-raised)."""
    pid = prompts.prompt_id(template, prompt)
    req = ChatRequest(messages=history + (Message("user", prompt, images),), temperature=temperature,
                      max_tokens=max_tokens, tag=tag, step=step, run_id=run_id)
    try:
        text, usage = backend.chat(req)
    except Exception as exc:
        if calls is not None:
            calls.append(CallRecord(tag, step, pid, 0, 0, f"{type(exc).__name__}: {exc}"))
        raise
    if calls is not None:
        calls.append(CallRecord(tag, step, pid, usage.prompt_tokens, usage.completion_tokens))
    return text


def call_json(backend: Backend, tag: str, template: str, prompt: str, *, repair_retries: int = 0,
              calls: list | None = None, **kwargs) -> dict:
    """Like :func:`call_text` but parses a JSON object from the reply.

    With ``repair_retries`` the model is re-asked after unparseable output.
    """
    text = call_text(backend, tag, template, prompt, calls=calls, **kwargs)
    for attempt in range(repair_retries + 1):
        try:
            return extract_json(text)
        except ValueError:
            if attempt == repair_retries:
                if calls:
                    calls[-1] = _with_error(calls[-1], "unparseable JSON")
                raise
            if calls:
                calls[-1] = _with_error(calls[-1], "unparseable JSON")
            history = (Message("user", prompt), Message("assistant", text))
            text = call_text(backend, tag, template, REPAIR_NUDGE, calls=calls, history=history, **kwargs)
    raise AssertionError("unreachable")


def _with_error(rec: CallRecord, error: str) -> CallRecord:
    return CallRecord(rec.tag, rec.step, rec.prompt_id, rec.prompt_tokens, rec.completion_tokens, error)
