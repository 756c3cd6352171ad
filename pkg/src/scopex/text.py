"""Text normalization and content hashing shared by the store and the network."""

from __future__ import annotations

import hashlib
import re

_WS = re.compile(r"\s+")
_BULLET = re.compile(r"^\s*(?:[-*•]+|\d+[.)]|\(\d+\))\s*")


def normalize(text: str) -> str:
    """Lowercase and collapse internal whitespace."""
    return _WS.sub(" ", text).strip().lower()


def content_key(*parts: str, length: int = 16) -> str:
    h = hashlib.sha256()
    for i, part in enumerate(parts):
        if i:
            h.update(b"\x00")
        h.update(normalize(part).encode("utf-8"))
    return h.hexdigest()[:length]


def question_key(question: str) -> str:
    """Identifier for a question; equal for normalized-equal texts."""
    return content_key(question)


def split_lines(text: str) -> list[str]:
    """Split a model reply into list items, dropping bullets, numbering and blanks."""
    items = []
    for line in text.splitlines():
        line = _BULLET.sub("", line).strip()
        if line:
            items.append(line)
    return items
