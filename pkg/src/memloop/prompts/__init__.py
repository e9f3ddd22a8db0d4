"""Agent prompt templates.

Templates are plain text files using ``str.format`` placeholders; a
directory of same-named files can override any of them.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache
from importlib import resources
from pathlib import Path

NAMES = ("zoom_in", "zoom_out", "visual", "judge", "responder_locomo", "responder_longmemeval")


@lru_cache(maxsize=None)
def _packaged(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def load_template(name: str, override_dir=None) -> str:
    if name not in NAMES:
        raise KeyError(f"unknown prompt template {name!r}")
    if override_dir is not None:
        path = Path(override_dir) / f"{name}.txt"
        if path.exists():
            return path.read_text(encoding="utf-8")
    return _packaged(name)


def render(name: str, override_dir=None, **fields) -> str:
    return load_template(name, override_dir).format(**fields)


def prompt_id(name: str, text: str) -> str:
    """Stable identifier of a rendered prompt, recorded in traces."""
    return f"{name}:{hashlib.sha256(text.encode('utf-8')).hexdigest()[:12]}"
