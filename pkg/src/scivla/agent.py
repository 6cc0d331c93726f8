"""Transition agent: turns a state gap into a validated transition program.

Two backends share one contract. ``rule_based`` applies the safety recipe
directly (release if holding, lift if the direct path is blocked or an object
was held, then recover joints). ``remote`` asks a chat model for a program
and feeds validator complaints back until it passes or retries run out.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Mapping

from scivla.client import ChatClient, RemoteSettings
from scivla.dsl import (
    DEFAULT_MAX_COMMANDS,
    LiftToSafe,
    RecoverJoints,
    ReleaseGripper,
    TransitionProgram,
    Translate,
    parse,
    validate,
)
from scivla.errors import ConfigError, ParseError, ReplyFormatError, SynthesisFailed
from scivla.sim.scenario import ScenarioSpec
from scivla.sim.state import JointConfiguration, ObservationSummary, WorldState

RULE_BASED = "rule_based"
REMOTE = "remote"

ROLE = (
    "You are a robot motion programmer. You write short transition scripts that move a "
    "laboratory robot arm from where it stopped after one task to the start pose of the "
    "next task. You only write commands from the transition language described below."
)

GRAMMAR = """\
One command per line; '#' starts a comment; keywords are case-insensitive.
  release_gripper                          open the gripper and drop anything held
  translate axis=<x|y|z> delta=<meters>    move the gripper in a straight line along one axis
  lift_to_safe height=<meters>             move the gripper straight up or down to a height
  recover_joints target=[q1, ..., qJ, gripper] steps=<1..1000>
                                           interpolate all joints to the target configuration"""

SAFETY_RULES = """\
1. Safety has priority over speed: plan every motion for avoiding collisions with instruments and keep-out zones.
2. First check whether the gripper needs to be released; if it is holding an object, the first command must be release_gripper.
3. Check whether there are obstacles near the gripper and the arm; if a keep-out zone lies between the current and the target gripper positions, lift_to_safe to the safe height before any other motion, and make sure every later straight-line move also stays clear of it.
4. The last command must be recover_joints with exactly the target configuration given above.
5. Use at most {max_commands} commands."""

OUTPUT_CONTRACT = (
    "Reply with exactly one fenced code block containing only the commands. "
    "Do not include a second code block."
)


@dataclass(frozen=True)
class TransitionContext:
    next_prompt: str
    observation: ObservationSummary
    curr_qpos: JointConfiguration
    target_qpos: JointConfiguration
    scene_axis_hints: Mapping[str, str] = field(default_factory=dict)
    safe_height: float | None = None

    def __post_init__(self) -> None:
        if self.curr_qpos.dof != self.target_qpos.dof:
            raise ValueError("current and target configurations differ in joint count")


@dataclass(frozen=True)
class AgentConfig:
    backend: str = RULE_BASED
    max_retries: int = 3
    recover_steps: int = 50
    safe_margin: float = 0.05
    max_commands: int = DEFAULT_MAX_COMMANDS
    remote: RemoteSettings = field(default_factory=RemoteSettings)

    def __post_init__(self) -> None:
        if self.backend not in (RULE_BASED, REMOTE):
            raise ConfigError(f"unknown backend {self.backend!r}", "agent.backend")
        if not 0 <= self.max_retries <= 10:
            raise ConfigError("must be within [0, 10]", "agent.max_retries")
        if not 1 <= self.recover_steps <= 1000:
            raise ConfigError("must be within [1, 1000]", "agent.recover_steps")

    @classmethod
    def from_dict(cls, data: Mapping | None) -> "AgentConfig":
        data = dict(data or {})
        remote = data.pop("remote", None) or {}
        unknown = set(data) - {"backend", "max_retries", "recover_steps", "safe_margin", "max_commands"}
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", "agent")
        try:
            return cls(remote=RemoteSettings(**remote), **data)
        except TypeError as exc:
            raise ConfigError(str(exc), "agent") from None

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "max_retries": self.max_retries,
            "recover_steps": self.recover_steps,
            "safe_margin": self.safe_margin,
            "max_commands": self.max_commands,
            "remote": vars(self.remote).copy(),
        }


@dataclass
class Attempt:
    number: int
    reply: str | None
    program: TransitionProgram | None
    problems: list[str]

    def to_dict(self) -> dict:
        return {
            "attempt": self.number,
            "reply": self.reply,
            "program": str(self.program) if self.program else None,
            "problems": list(self.problems),
        }


@dataclass
class SynthesisResult:
    program: TransitionProgram
    attempts: list[Attempt]


# prompt and reply ---------------------------------------------------------


def _fmt(values) -> str:
    return "[" + ", ".join(repr(float(v)) for v in values) + "]"


def build_prompt(ctx: TransitionContext, max_commands: int = DEFAULT_MAX_COMMANDS) -> str:
    obs = json.dumps(ctx.observation.to_dict(), sort_keys=True)
    hints = "\n".join(f"  {axis}: {ctx.scene_axis_hints[axis]}" for axis in sorted(ctx.scene_axis_hints)) or "  (none)"
    safe = f"{ctx.safe_height!r} m" if ctx.safe_height is not None else "not given"
    return "\n".join(
        [
            ROLE,
            "",
            "Write the prerequisite actions that must run before the next task can start.",
            "",
            "## Inputs",
            f"Next task: {ctx.next_prompt}",
            f"Current observation (structured, replaces the camera image): {obs}",
            f"Current configuration curr_qpos (joints..., gripper): {_fmt(ctx.curr_qpos.to_list())}",
            f"Target configuration target_qpos (joints..., gripper): {_fmt(ctx.target_qpos.to_list())}",
            f"Safe height: {safe}",
            "Axis cues from the camera view:",
            hints,
            "",
            "## Command language",
            GRAMMAR,
            "",
            "## Safety rules",
            SAFETY_RULES.format(max_commands=max_commands),
            "",
            "## Output format",
            OUTPUT_CONTRACT,
        ]
    )


_FENCE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


def parse_reply(reply: str) -> TransitionProgram:
    blocks = list(_FENCE.finditer(reply))
    if not blocks:
        raise ReplyFormatError("reply contains no fenced code block")
    if len(blocks) > 1:
        spans = [m.span() for m in blocks]
        raise ReplyFormatError(f"reply contains {len(blocks)} fenced blocks at {spans}; expected one", spans)
    return parse(blocks[0].group(1))


# synthesis ----------------------------------------------------------------


def synthesize(
    ctx: TransitionContext,
    world: WorldState,
    scenario: ScenarioSpec,
    config: AgentConfig,
    client: ChatClient | None = None,
) -> SynthesisResult:
    if config.backend == RULE_BASED:
        program = rule_based_program(ctx, world, scenario, config)
        violations = validate(program, world, scenario, config.max_commands)
        attempt = Attempt(1, None, program, [str(v) for v in violations])
        if violations:
            raise SynthesisFailed([attempt])
        return SynthesisResult(program, [attempt])
    if client is None:
        raise ConfigError("remote backend needs a chat client", "agent")
    return _remote(ctx, world, scenario, config, client)


def rule_based_program(
    ctx: TransitionContext, world: WorldState, scenario: ScenarioSpec, config: AgentConfig
) -> TransitionProgram:
    cmds: list = []
    holding = world.effector.holding is not None
    if holding:
        cmds.append(ReleaseGripper())
    here = world.effector.position
    there = scenario.effector_of(ctx.target_qpos.joints)
    blocked = any(b.segment_hits(here, there) for b in world.keep_out)
    if blocked or holding:
        height = scenario.safe_height(config.safe_margin) if ctx.safe_height is None else ctx.safe_height
        height = min(max(height, here[2]), scenario.workspace.hi[2])
        cmds.append(LiftToSafe(height))
        lifted = (here[0], here[1], height)
        if any(b.segment_hits(lifted, there) for b in world.keep_out):
            # descend vertically onto the target instead of cutting a corner
            for axis, i in (("x", 0), ("y", 1)):
                if there[i] != lifted[i]:
                    cmds.append(Translate(axis, there[i] - lifted[i]))
    steps = config.recover_steps
    gap = max(abs(a - b) for a, b in zip(ctx.curr_qpos.joints, ctx.target_qpos.joints))
    steps = max(steps, math.ceil(gap / (0.99 * scenario.max_step_delta)))
    cmds.append(RecoverJoints(ctx.target_qpos, min(steps, 1000)))
    return TransitionProgram(tuple(cmds))


def _remote(
    ctx: TransitionContext,
    world: WorldState,
    scenario: ScenarioSpec,
    config: AgentConfig,
    client: ChatClient,
) -> SynthesisResult:
    messages = [
        {"role": "system", "content": ROLE},
        {"role": "user", "content": build_prompt(ctx, config.max_commands)},
    ]
    attempts: list[Attempt] = []
    for number in range(1, config.max_retries + 2):
        reply = client.complete(messages)
        program = None
        try:
            program = parse_reply(reply)
            problems = [str(v) for v in validate(program, world, scenario, config.max_commands)]
        except (ReplyFormatError, ParseError) as exc:
            problems = [f"[format] {exc}"]
        attempts.append(Attempt(number, reply, program, problems))
        if not problems:
            return SynthesisResult(program, attempts)
        messages = messages + [
            {"role": "assistant", "content": reply},
            {"role": "user", "content": "The script was rejected:\n" + "\n".join(problems)},
        ]
    raise SynthesisFailed(attempts)

