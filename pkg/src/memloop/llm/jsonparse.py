"""Recover a JSON object from free-form model output."""

from __future__ import annotations

import json
import re
from typing import Any

_FENCE = re.compile(r"```[a-zA-Z0-9_-]*")
_TRAILING_COMMA = re.compile(r",(\s*[}\]])")


class JSONExtractError(ValueError):
    def __init__(self, raw: str):
        super().__init__("no JSON object found in model output")
        self.raw = raw


def _loads_object(text: str) -> dict | None:
    try:
        value = json.loads(text)
    except (json.JSONDecodeError, RecursionError):
        return None
    return value if isinstance(value, dict) else None


def _balanced_spans(text: str) -> list[tuple[int, int]]:
    """All ``{...}`` spans whose braces balance, ignoring braces inside strings."""
    spans = []
    for start, ch in enumerate(text):
        if ch != "{":
            continue
        depth = 0
        in_str = False
        escaped = False
        for pos in range(start, len(text)):
            c = text[pos]
            if in_str:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_str = False
            elif c == '"':
                in_str = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    spans.append((start, pos + 1))
                    break
    spans.sort(key=lambda s: (s[0] - s[1], s[0]))
    return spans


def _largest_object(text: str) -> dict | None:
    for lo, hi in _balanced_spans(text):
        obj = _loads_object(text[lo:hi])
        if obj is not None:
            return obj
    return None


def extract_json(text: str) -> dict[str, Any]:
    """Parse a JSON object out of ``text``.

    Tries, in order: the whole text, the largest brace-balanced substring,
    and the text with code fences (and trailing commas) stripped.  Raises
    :class:`JSONExtractError` carrying the raw text when all fail.
    """
    obj = _loads_object(text)
    if obj is not None:
        return obj
    obj = _largest_object(text)
    if obj is not None:
        return obj
    stripped = _TRAILING_COMMA.sub(r"\1", _FENCE.sub("", text)).strip()
    obj = _loads_object(stripped)
    if obj is None:
        obj = _largest_object(stripped)
    if obj is not None:
        return obj
    raise JSONExtractError(text)


def as_int_ids(value: Any) -> tuple[list[int], int]:
    """Coerce a model-provided id list to ints; returns (ids, n_rejected)."""
    if value is None:
        return [], 0
    if not isinstance(value, list):
        value = [value]
    ids, bad = [], 0
    for v in value:
        if isinstance(v, bool):
            bad += 1
        elif isinstance(v, int):
            ids.append(v)
        elif isinstance(v, float) and v.is_integer():
            ids.append(int(v))
        elif isinstance(v, str) and v.strip().lstrip("-").isdigit():
            ids.append(int(v.strip()))
        else:
            bad += 1
    return ids, bad


def as_str_list(value: Any) -> list[str]:
    if value is None:
        return []
    if not isinstance(value, list):
        value = [value]
    return [v if isinstance(v, str) else json.dumps(v) for v in value
            if v is not None and not isinstance(v, (dict, list))]


def as_bool(value: Any) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("true", "yes", "1")
    return bool(value)
