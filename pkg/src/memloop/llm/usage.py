from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping


@dataclass(frozen=True)
class TokenCount:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: "TokenCount") -> "TokenCount":
        return TokenCount(self.prompt_tokens + other.prompt_tokens,
                          self.completion_tokens + other.completion_tokens)

    def to_dict(self) -> dict:
        return {"prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
                "total_tokens": self.total_tokens}


@dataclass(frozen=True)
class TokenUsage:
    """Token totals plus a per-agent breakdown keyed by request tag."""

    prompt_tokens: int = 0
    completion_tokens: int = 0
    per_tag: Mapping[str, TokenCount] = field(default_factory=dict)

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    @classmethod
    def of(cls, prompt_tokens: int, completion_tokens: int) -> "TokenUsage":
        return cls(prompt_tokens, completion_tokens)

    def to_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
            "per_tag": {k: v.to_dict() for k, v in sorted(self.per_tag.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TokenUsage":
        per_tag = {k: TokenCount(v["prompt_tokens"], v["completion_tokens"])
                   for k, v in d.get("per_tag", {}).items()}
        return cls(d["prompt_tokens"], d["completion_tokens"], per_tag)


def meter(ledger: TokenUsage, usage: TokenUsage, tag: str) -> TokenUsage:
    """Return ``ledger`` with ``usage`` added to the totals and under ``tag``."""
    add = TokenCount(usage.prompt_tokens, usage.completion_tokens)
    per_tag = dict(ledger.per_tag)
    per_tag[tag] = per_tag.get(tag, TokenCount()) + add
    return TokenUsage(ledger.prompt_tokens + add.prompt_tokens,
                      ledger.completion_tokens + add.completion_tokens,
                      per_tag)


def merge(a: TokenUsage, b: TokenUsage) -> TokenUsage:
    """Combine two metered ledgers, e.g. per-run ledgers in a batch evaluation."""
    for tag, count in sorted(b.per_tag.items()):
        a = meter(a, TokenUsage(count.prompt_tokens, count.completion_tokens), tag)
    return a
