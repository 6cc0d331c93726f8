"""Demonstration store: the training corpus and its prompt index.

File format is JSON Lines, one demonstration per line::

    {"prompt": "...", "trajectory": [[q1, ..., qJ, gripper], ...], "metadata": {...}}

Gripper commands are not stored; they are recovered from aperture changes
between consecutive trajectory points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from scivla.errors import DemoFormatError
from scivla.sim.state import Action, JointConfiguration
from scivla.text import normalize_prompt

_OPEN = 0.5


def gripper_command(prev: float, cur: float) -> str:
    if prev >= _OPEN > cur:
        return "close"
    if prev < _OPEN <= cur:
        return "open"
    return "hold"


@dataclass(frozen=True)
class Demonstration:
    prompt: str
    trajectory: tuple[tuple[JointConfiguration, str], ...]
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        prompt = normalize_prompt(self.prompt)
        if not prompt:
            raise ValueError("demonstration prompt is empty")
        if not self.trajectory:
            raise ValueError("demonstration trajectory is empty")
        dof = self.trajectory[0][0].dof
        if any(cfg.dof != dof for cfg, _ in self.trajectory):
            raise ValueError("trajectory mixes joint counts")
        object.__setattr__(self, "prompt", prompt)

    @classmethod
    def from_configs(cls, prompt: str, configs: Iterable[JointConfiguration], metadata=None) -> "Demonstration":
        configs = list(configs)
        traj = []
        for i, cfg in enumerate(configs):
            cmd = "hold" if i == 0 else gripper_command(configs[i - 1].gripper, cfg.gripper)
            traj.append((cfg, cmd))
        return cls(prompt, tuple(traj), dict(metadata or {}))

    @property
    def start(self) -> JointConfiguration:
        return self.trajectory[0][0]

    @property
    def dof(self) -> int:
        return self.start.dof

    def actions(self) -> Iterator[Action]:
        """The per-step actions that reproduce this trajectory from its start."""
        for (prev, _), (cur, cmd) in zip(self.trajectory, self.trajectory[1:]):
            yield Action(tuple(b - a for a, b in zip(prev.joints, cur.joints)), cmd)

    def to_record(self) -> dict:
        return {
            "prompt": self.prompt,
            "trajectory": [cfg.to_list() for cfg, _ in self.trajectory],
            "metadata": dict(self.metadata),
        }


@dataclass(frozen=True)
class PromptEntry:
    prompt: str
    demo_ids: tuple[int, ...]


@dataclass(frozen=True)
class PromptIndex:
    entries: tuple[PromptEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def prompts(self) -> list[str]:
        return [e.prompt for e in self.entries]

    def ids_for(self, prompt: str) -> tuple[int, ...] | None:
        key = normalize_prompt(prompt)
        for e in self.entries:
            if e.prompt == key:
                return e.demo_ids
        return None


class DemoStore:
    """Immutable, id-addressed collection of demonstrations (ids are list positions)."""

    def __init__(self, demos: Iterable[Demonstration] = ()) -> None:
        self._demos = tuple(demos)
        dofs = {d.dof for d in self._demos}
        if len(dofs) > 1:
            raise ValueError(f"store mixes joint counts {sorted(dofs)}")
        self._index: PromptIndex | None = None

    def __len__(self) -> int:
        return len(self._demos)

    def __iter__(self) -> Iterator[Demonstration]:
        return iter(self._demos)

    def __getitem__(self, demo_id: int) -> Demonstration:
        return self._demos[demo_id]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, DemoStore) and self._demos == other._demos

    def __add__(self, other: "DemoStore") -> "DemoStore":
        return DemoStore(self._demos + other._demos)

    @property
    def dof(self) -> int | None:
        return self._demos[0].dof if self._demos else None

    @property
    def index(self) -> PromptIndex:
        if self._index is None:
            self._index = extract_prompts(self)
        return self._index


def extract_prompts(store: DemoStore) -> PromptIndex:
    """Distinct normalized prompts in first-seen order, each with its demo ids."""
    groups: dict[str, list[int]] = {}
    for i, demo in enumerate(store):
        groups.setdefault(demo.prompt, []).append(i)
    return PromptIndex(tuple(PromptEntry(p, tuple(ids)) for p, ids in groups.items()))


def save_store(store: DemoStore, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for demo in store:
            fh.write(json.dumps(demo.to_record(), separators=(",", ":")))
            fh.write("\n")


def load_store(path: str | Path) -> DemoStore:
    demos = []
    dof = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            demo = _parse_record(line, lineno)
            if dof is None:
                dof = demo.dof
            elif demo.dof != dof:
                raise DemoFormatError(f"demonstration has {demo.dof} joints, store has {dof}", lineno)
            demos.append(demo)
    return DemoStore(demos)


def _parse_record(line: str, lineno: int) -> Demonstration:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DemoFormatError(f"invalid JSON: {exc.msg}", lineno) from None
    if not isinstance(rec, dict):
        raise DemoFormatError("record is not an object", lineno)
    prompt, traj = rec.get("prompt"), rec.get("trajectory")
    if not isinstance(prompt, str):
        raise DemoFormatError("prompt must be a string", lineno)
    if not isinstance(traj, list) or not traj:
        raise DemoFormatError("trajectory must be a non-empty list", lineno)
    configs = []
    for k, point in enumerate(traj):
        if not isinstance(point, list) or len(point) < 2 or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in point
        ):
            raise DemoFormatError(f"trajectory[{k}] must be a list of numbers [joints..., gripper]", lineno)
        try:
            configs.append(JointConfiguration.from_list(point))
        except ValueError as exc:
            raise DemoFormatError(f"trajectory[{k}]: {exc}", lineno) from None
    metadata = rec.get("metadata", {})
    if not isinstance(metadata, dict):
        raise DemoFormatError("metadata must be an object", lineno)
    try:
        return Demonstration.from_configs(prompt, configs, metadata)
    except ValueError as exc:
        raise DemoFormatError(str(exc), lineno) from None
