"""Prompt normalization and tokenization."""

from __future__ import annotations

import re

_WS = re.compile(r"\s+")
_TOKEN = re.compile(r"[a-z0-9]+")


def normalize_prompt(text: str) -> str:
    """Strip surrounding whitespace and collapse internal runs to one space."""
    return _WS.sub(" ", text).strip()


def tokens(text: str) -> frozenset[str]:
    """Lowercase word tokens used for set similarity."""
    return frozenset(_TOKEN.findall(text.lower()))
