"""Executed-action traces."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping

from scivla.sim.state import Action

POLICY = "policy"
TRANSITION = "transition"


@dataclass(frozen=True)
class TraceEntry:
    step: int
    action: Action
    provenance: str
    task: int

    def to_dict(self) -> dict:
        return {"step": self.step, **self.action.to_dict(), "provenance": self.provenance, "task": self.task}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TraceEntry":
        return cls(int(data["step"]), Action.from_dict(data), data["provenance"], int(data["task"]))


@dataclass
class ActionTrace:
    entries: list[TraceEntry] = field(default_factory=list)

    def append(self, step: int, action: Action, provenance: str, task: int) -> None:
        if self.entries and step <= self.entries[-1].step:
            raise ValueError("trace step indexes must increase")
        self.entries.append(TraceEntry(step, action, provenance, task))

    def extend(self, other: "ActionTrace") -> None:
        for e in other.entries:
            self.append(e.step, e.action, e.provenance, e.task)

    def __iter__(self) -> Iterator[TraceEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def provenance_string(self) -> str:
        """One letter per entry: ``p`` for policy, ``t`` for transition."""
        return "".join("p" if e.provenance == POLICY else "t" for e in self.entries)

    def to_list(self) -> list[dict]:
        return [e.to_dict() for e in self.entries]

    @classmethod
    def from_list(cls, items: list[Mapping[str, Any]]) -> "ActionTrace":
        return cls([TraceEntry.from_dict(d) for d in items])
