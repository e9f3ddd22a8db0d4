from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

DEFAULT_CUE_PATTERN = r"\[image:"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LoopConfig:
    top_k: int = 10
    window_w: int = 4
    max_iterations: int = 8
    queries_num: int = 1
    temp_perception: float = 1.0
    temp_judge: float = 0.0
    temp_responder: float = 1.0
    vision_enabled: bool = True
    known_budget: int = 4000
    judge_history: int = 3
    answer_style: str = "locomo"
    cue_pattern: str = DEFAULT_CUE_PATTERN
    prompt_dir: str | None = None
    max_tokens: int | None = None

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.window_w < 0:
            raise ConfigError("window_w must be >= 0")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.queries_num < 1:
            raise ConfigError("queries_num must be >= 1")
        if self.known_budget < 0:
            raise ConfigError("known_budget must be >= 0")
        for name in ("temp_perception", "temp_judge", "temp_responder"):
            t = getattr(self, name)
            if not 0.0 <= t <= 2.0:
                raise ConfigError(f"{name} must be in [0, 2], got {t}")
        if self.answer_style not in ("locomo", "longmemeval"):
            raise ConfigError(f"unknown answer_style {self.answer_style!r}")

    @classmethod
    def longmemeval(cls, **overrides) -> "LoopConfig":
        """Defaults for multi-session assistant-chat corpora: wider windows."""
        return cls(**{"window_w": 15, "answer_style": "longmemeval", **overrides})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LoopConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown loop settings: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **changes) -> "LoopConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})
