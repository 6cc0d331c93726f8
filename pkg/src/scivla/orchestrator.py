"""Long-horizon execution loop.

For each atomic task: roll the policy for exactly its step budget, record
whether the task's end state satisfies its predicates, then (in ``sci`` mode,
before every task but the last) retrieve the next task's start configuration,
synthesize a transition program and splice its steps into the trace.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

import yaml

from scivla.agent import AgentConfig, TransitionContext, synthesize
from scivla.client import ChatClient
from scivla.demos import DemoStore
from scivla.dsl import interpret
from scivla.errors import ConfigError, SynthesisFailed, TransportError, UnknownTask
from scivla.policy import Policy, PolicyInput
from scivla.retrieval import DEFAULT_MATCH_THRESHOLD, SemanticMatcher, search_target
from scivla.sim.scenario import ScenarioSpec
from scivla.sim.state import WorldState
from scivla.sim.world import evaluate_all, init_scene, make_rng, observe, step
from scivla.text import normalize_prompt
from scivla.trace import POLICY, ActionTrace

log = logging.getLogger(__name__)

BASELINE = "baseline"
SCI = "sci"
MODES = (BASELINE, SCI)
DEFAULT_CONTROL_RATE = 20.0
DEFAULT_TASK_SECONDS = 3.0


def budget_steps(seconds: float, control_rate: float) -> int:
    """Steps in a wall-clock budget, rounded up; exact for decimal inputs."""
    if not seconds > 0 or not control_rate > 0:
        raise ValueError("seconds and control_rate must be positive")
    return math.ceil(Fraction(str(seconds)) * Fraction(str(control_rate)))


@dataclass(frozen=True)
class TaskSequence:
    prompts: tuple[str, ...]
    budgets: tuple[int, ...]
    name: str = "sequence"

    def __post_init__(self) -> None:
        prompts = tuple(normalize_prompt(p) for p in self.prompts)
        object.__setattr__(self, "prompts", prompts)
        object.__setattr__(self, "budgets", tuple(int(b) for b in self.budgets))
        if not prompts or not all(prompts):
            raise ConfigError("need at least one non-empty prompt", "sequence.prompts")
        if len(self.budgets) != len(prompts):
            raise ConfigError("one budget per prompt", "sequence.budgets")
        if any(b < 1 for b in self.budgets):
            raise ConfigError("budgets must be >= 1", "sequence.budgets")

    def __len__(self) -> int:
        return len(self.prompts)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TaskSequence":
        prompts = data.get("prompts")
        if isinstance(prompts, str):
            prompts = [p for p in prompts.split(",")]
        if not isinstance(prompts, list):
            raise ConfigError("must be a list of prompts", "sequence.prompts")
        budgets = data.get("budgets")
        if budgets is None:
            n = budget_steps(
                float(data.get("seconds", DEFAULT_TASK_SECONDS)),
                float(data.get("control_rate", DEFAULT_CONTROL_RATE)),
            )
            budgets = [n] * len(prompts)
        elif isinstance(budgets, int):
            budgets = [budgets] * len(prompts)
        return cls(tuple(prompts), tuple(budgets), str(data.get("name", "sequence")))

    def to_dict(self) -> dict:
        return {"name": self.name, "prompts": list(self.prompts), "budgets": list(self.budgets)}


def load_sequence(path: str | Path) -> TaskSequence:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}", "sequence") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", "sequence") from None
    if not isinstance(data, Mapping):
        raise ConfigError("sequence file must be a mapping", "sequence")
    return TaskSequence.from_dict(data)


@dataclass
class TransitionLog:
    after_task: int
    target_prompt: str
    demo_id: int
    program: str | None
    attempts: list[dict] = field(default_factory=list)
    faults: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "after_task": self.after_task,
            "target_prompt": self.target_prompt,
            "demo_id": self.demo_id,
            "program": self.program,
            "attempts": self.attempts,
            "faults": self.faults,
        }


@dataclass
class RunOutcome:
    successes: list[bool]
    trace: ActionTrace
    faults: list[str]
    transitions: list[TransitionLog]
    final_state: WorldState
    initial_state: WorldState
    modes: list[str] = field(default_factory=list)
    excluded: bool = False
    exclusion_reason: str | None = None

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.final_state.serialize().encode())
        h.update(repr(self.successes).encode())
        h.update(str(len(self.trace)).encode())
        return h.hexdigest()[:16]

    def trace_document(self, scenario: ScenarioSpec, seed: int, perturbation: float) -> dict:
        """Everything ``scivla replay`` needs to re-execute and check this run."""
        return {
            "scenario": scenario.name,
            "seed": seed,
            "perturbation": perturbation,
            "entries": self.trace.to_list(),
            "final_state": self.final_state.to_dict(),
        }


def _check_prompts(sequence: TaskSequence, scenario: ScenarioSpec, store: DemoStore) -> list[str]:
    index = store.index
    resolved = []
    for p in sequence.prompts:
        canonical = scenario.policy_prompt(p)
        if index.ids_for(canonical) is None:
            raise UnknownTask(canonical)
        resolved.append(canonical)
    return resolved


def run(
    sequence: TaskSequence,
    scenario: ScenarioSpec,
    seed: int,
    mode: str,
    policy: Policy,
    store: DemoStore,
    agent_config: AgentConfig | None = None,
    *,
    perturbation: float | None = None,
    matcher: SemanticMatcher | None = None,
    match_threshold: float = DEFAULT_MATCH_THRESHOLD,
    client: ChatClient | None = None,
) -> RunOutcome:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}", "mode")
    agent_config = agent_config or AgentConfig()
    policy_prompts = _check_prompts(sequence, scenario, store)
    predicates = [scenario.task(p).predicates for p in sequence.prompts]

    state = init_scene(scenario, seed, perturbation)
    initial = state
    trace = ActionTrace()
    successes: list[bool] = []
    faults: list[str] = []
    transitions: list[TransitionLog] = []
    task_modes: list[str] = []
    n = len(sequence)

    for i in range(n):
        obs = observe(state)
        handle = policy.reset_task(policy_prompts[i], obs)
        task_modes.append(handle.mode)
        rng = make_rng(seed, 1, i)
        for _ in range(sequence.budgets[i]):
            action = policy.next_action(PolicyInput(policy_prompts[i], obs), rng)
            trace.append(state.step_count, action, POLICY, i)
            state = step(scenario, state, action)
            obs = observe(state)
            if policy.done:
                break
        ok = evaluate_all(state, predicates[i]) and state.collision is None
        successes.append(ok)
        log.debug("task %d %r: mode=%s success=%s", i + 1, sequence.prompts[i], handle.mode, ok)

        if mode == SCI and i < n - 1:
            target, demo_id = search_target(
                sequence.prompts[i + 1], store.index, store, matcher, match_threshold
            )
            ctx = TransitionContext(
                next_prompt=sequence.prompts[i + 1],
                observation=obs,
                curr_qpos=state.arm,
                target_qpos=target,
                scene_axis_hints=scenario.axis_hints,
                safe_height=scenario.safe_height(agent_config.safe_margin),
            )
            entry = TransitionLog(i + 1, sequence.prompts[i + 1], demo_id, None)
            transitions.append(entry)
            try:
                result = synthesize(ctx, state, scenario, agent_config, client)
            except (SynthesisFailed, TransportError) as exc:
                if isinstance(exc, SynthesisFailed):
                    entry.attempts = [a.to_dict() for a in exc.attempts]
                entry.faults.append(str(exc))
                return RunOutcome(
                    successes, trace, faults + [str(exc)], transitions, state, initial, task_modes,
                    excluded=True, exclusion_reason=type(exc).__name__,
                )
            entry.program = str(result.program)
            entry.attempts = [a.to_dict() for a in result.attempts]
            executed = interpret(result.program, state, scenario, task_index=i)
            trace.extend(executed.trace)
            state = executed.state
            for fault in executed.faults:
                entry.faults.append(str(fault))
                faults.append(f"transition after task {i + 1}: {fault}")

    if state.collision is not None:
        faults.append(f"collision with {state.collision.box!r} at step {state.collision.step}")
    return RunOutcome(successes, trace, faults, transitions, state, initial, task_modes)


def replay_trace(scenario: ScenarioSpec, document: Mapping[str, Any]) -> WorldState:
    """Re-execute a recorded trace from its initial scene and return the final state."""
    state = init_scene(scenario, int(document["seed"]), float(document["perturbation"]))
    for entry in ActionTrace.from_list(document["entries"]):
        if entry.step != state.step_count:
            raise ConfigError(f"trace step {entry.step} does not follow step {state.step_count}", "trace")
        state = step(scenario, state, entry.action)
    return state

