"""Prompt matching and target-configuration lookup."""

from __future__ import annotations

from typing import Protocol, Sequence

from scivla.demos import DemoStore, PromptIndex
from scivla.errors import NoMatch
from scivla.sim.state import JointConfiguration
from scivla.text import normalize_prompt, tokens

DEFAULT_MATCH_THRESHOLD = 0.2


class SemanticMatcher(Protocol):
    def select(self, query: str, candidates: Sequence[str]) -> tuple[str, float]:
        """Return the best candidate and its similarity in [0, 1]."""
        ...


class JaccardMatcher:
    """Token-set Jaccard similarity with an inverted index over the candidates.

    Ties go to the lexicographically smallest prompt.
    """

    def __init__(self) -> None:
        self._cached_for: tuple[str, ...] | None = None
        self._postings: dict[str, list[int]] = {}
        self._sizes: list[int] = []

    def _build(self, candidates: tuple[str, ...]) -> None:
        self._postings = {}
        self._sizes = []
        for i, cand in enumerate(candidates):
            toks = tokens(cand)
            self._sizes.append(len(toks))
            for t in toks:
                self._postings.setdefault(t, []).append(i)
        self._cached_for = candidates

    def scores(self, query: str, candidates: Sequence[str]) -> list[float]:
        candidates = tuple(candidates)
        if candidates != self._cached_for:
            self._build(candidates)
        q = tokens(query)
        overlap = [0] * len(candidates)
        for t in q:
            for i in self._postings.get(t, ()):
                overlap[i] += 1
        out = []
        for inter, size in zip(overlap, self._sizes):
            union = len(q) + size - inter
            out.append(inter / union if union else 0.0)
        return out

    def select(self, query: str, candidates: Sequence[str]) -> tuple[str, float]:
        if not candidates:
            raise ValueError("no candidates")
        scored = self.scores(query, candidates)
        best = min(range(len(candidates)), key=lambda i: (-scored[i], candidates[i]))
        return candidates[best], scored[best]


class LLMMatcher:
    """Asks a chat model to pick the closest prompt by number.

    ``client`` is anything with ``complete(messages) -> str``; see
    :class:`scivla.client.ChatClient`. The reply's chosen prompt gets
    similarity 1.0; a reply of ``none`` or an unparseable answer scores 0.
    """

    def __init__(self, client) -> None:
        self.client = client

    @staticmethod
    def build_request(query: str, candidates: Sequence[str]) -> list[dict]:
        listing = "\n".join(f"{i}: {c}" for i, c in enumerate(candidates))
        return [
            {
                "role": "system",
                "content": "You match robot task instructions to the training task they describe.",
            },
            {
                "role": "user",
                "content": (
                    f"Target task: {query}\n\nTraining tasks:\n{listing}\n\n"
                    "Answer with only the number of the training task whose meaning is closest "
                    "to the target task, or 'none' if no task is related."
                ),
            },
        ]

    def select(self, query: str, candidates: Sequence[str]) -> tuple[str, float]:
        reply = self.client.complete(self.build_request(query, candidates)).strip().lower()
        digits = "".join(ch for ch in reply.split()[0] if ch.isdigit()) if reply else ""
        if digits and int(digits) < len(candidates):
            return candidates[int(digits)], 1.0
        return candidates[0], 0.0


def search_target(
    query: str,
    index: PromptIndex,
    store: DemoStore,
    matcher: SemanticMatcher | None = None,
    threshold: float = DEFAULT_MATCH_THRESHOLD,
) -> tuple[JointConfiguration, int]:
    """Start configuration of the lowest-id demonstration for the closest stored prompt."""
    if not len(index):
        raise NoMatch(query, None, 0.0)
    key = normalize_prompt(query)
    ids = index.ids_for(key)
    if ids is None:
        matcher = matcher or JaccardMatcher()
        best, score = matcher.select(key, index.prompts)
        if score < threshold:
            raise NoMatch(query, best, score)
        ids = index.ids_for(best)
    demo_id = min(ids)
    return store[demo_id].start, demo_id
