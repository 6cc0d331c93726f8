"""Atomic-task policies.

Only :class:`ReplayPolicy` ships. It replays the recorded joint deltas of the
demonstration whose start is nearest the current joints, but only when that
start is within ``epsilon`` (infinity norm). Outside the gate it trembles:
small zero-mean random deltas for the whole task, which is how a policy
trained on isolated atomic tasks behaves when started from an unseen state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from scivla.demos import DemoStore
from scivla.errors import UnknownTask
from scivla.sim.state import Action, JointConfiguration, ObservationSummary
from scivla.text import normalize_prompt

REPLAY = "replay"
JITTER = "jitter"


@dataclass(frozen=True)
class PolicyInput:
    prompt: str
    observation: ObservationSummary


@dataclass(frozen=True)
class DistributionGate:
    epsilon: float = 0.15

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def admits(self, distance: float) -> bool:
        return distance <= self.epsilon


@dataclass
class TaskHandle:
    prompt: str
    demo_id: int
    mode: str
    distance: float
    cursor: int = 0


class Policy(Protocol):
    def reset_task(self, prompt: str, observation: ObservationSummary) -> TaskHandle: ...

    def next_action(self, inp: PolicyInput, rng: np.random.Generator) -> Action: ...

    @property
    def done(self) -> bool:
        """True once the policy considers the current task complete."""
        ...


class ReplayPolicy:
    def __init__(
        self,
        store: DemoStore,
        gate: DistributionGate | None = None,
        jitter_amp: float = 0.01,
        max_step_delta: float = 0.05,
    ) -> None:
        if not 0 <= jitter_amp <= max_step_delta:
            raise ValueError("jitter_amp must lie in [0, max_step_delta]")
        self.store = store
        self.gate = gate or DistributionGate()
        self.jitter_amp = jitter_amp
        self.handle: TaskHandle | None = None
        self._actions: list[Action] = []

    @property
    def done(self) -> bool:
        return False

    def reset_task(self, prompt: str, observation: ObservationSummary) -> TaskHandle:
        key = normalize_prompt(prompt)
        ids = self.store.index.ids_for(key)
        if not ids:
            raise UnknownTask(key)
        here = JointConfiguration(observation.joints, observation.gripper)
        # nearest start, lowest id on ties
        demo_id = min(ids, key=lambda i: (here.distance(self.store[i].start), i))
        distance = here.distance(self.store[demo_id].start)
        mode = REPLAY if self.gate.admits(distance) else JITTER
        self.handle = TaskHandle(key, demo_id, mode, distance)
        self._actions = list(self.store[demo_id].actions()) if mode == REPLAY else []
        return self.handle

    def next_action(self, inp: PolicyInput, rng: np.random.Generator) -> Action:
        if self.handle is None or self.handle.prompt != normalize_prompt(inp.prompt):
            self.reset_task(inp.prompt, inp.observation)
        h = self.handle
        dof = len(inp.observation.joints)
        if h.mode == REPLAY:
            if h.cursor < len(self._actions):
                action = self._actions[h.cursor]
                h.cursor += 1
                return action
            return Action((0.0,) * dof, "hold")
        h.cursor += 1
        return Action(tuple(float(v) for v in rng.uniform(-self.jitter_amp, self.jitter_amp, dof)), "hold")
