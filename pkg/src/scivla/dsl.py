"""Transition DSL: a closed command language for bridging moves between tasks.

Grammar (one command per line, ``#`` starts a comment, keywords are
case-insensitive, numbers are decimal)::

    release_gripper
    translate axis=<x|y|z> delta=<meters>
    lift_to_safe height=<meters>
    recover_joints target=[q1, ..., qJ, gripper] steps=<1..1000>

Arguments are ``key=value`` pairs in any order.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

from scivla.errors import InterpreterFault, ParseError
from scivla.sim.scenario import ScenarioSpec
from scivla.sim.state import Action, JointConfiguration, ObjectPose, WorldState
from scivla.sim.world import graspable_near
from scivla.sim.world import step as world_step
from scivla.trace import TRANSITION, ActionTrace

MAX_DELTA = 1.0
MAX_STEPS = 1000
DEFAULT_MAX_COMMANDS = 16
AXES = ("x", "y", "z")

# validation rule ids
RELEASE_FIRST = "release_first"  # recover while holding with no earlier release
RETREAT_FIRST = "retreat_first"  # path crosses a keep-out box with no earlier lift above it
NO_RECOVERY = "no_recovery"  # program never restores joints
TOO_LONG = "too_long"  # more than max_commands commands
OUT_OF_BOUNDS = "out_of_bounds"  # lift height or recovery target outside the scene/robot limits
STEP_LIMIT = "step_limit"  # recovery would need per-step increments above max_step_delta
PATH_COLLISION = "path_collision"  # path still crosses a keep-out box after lifting above it


@dataclass(frozen=True)
class ReleaseGripper:
    def __str__(self) -> str:
        return "release_gripper"


@dataclass(frozen=True)
class Translate:
    axis: str
    delta: float

    def __str__(self) -> str:
        return f"translate axis={self.axis} delta={self.delta!r}"


@dataclass(frozen=True)
class LiftToSafe:
    height: float

    def __str__(self) -> str:
        return f"lift_to_safe height={self.height!r}"


@dataclass(frozen=True)
class RecoverJoints:
    target: JointConfiguration
    steps: int

    def __str__(self) -> str:
        values = ", ".join(repr(v) for v in self.target.to_list())
        return f"recover_joints target=[{values}] steps={self.steps}"


Command = Union[ReleaseGripper, Translate, LiftToSafe, RecoverJoints]


@dataclass(frozen=True)
class TransitionProgram:
    commands: tuple[Command, ...]

    def __str__(self) -> str:
        return "\n".join(str(c) for c in self.commands)

    def __len__(self) -> int:
        return len(self.commands)


def format_program(program: TransitionProgram) -> str:
    return str(program) + "\n"


# parsing ------------------------------------------------------------------

_NUMBER = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?\Z")
_HEAD = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*)")
_ARG = re.compile(r"\s+([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(\[[^\]]*\]|[^\s\[\]#]+)")
_TRAIL = re.compile(r"\s*\Z")

_SIGNATURES = {
    "release_gripper": (),
    "translate": ("axis", "delta"),
    "lift_to_safe": ("height",),
    "recover_joints": ("target", "steps"),
}


def parse(text: str) -> TransitionProgram:
    commands = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        commands.append(_parse_line(line, lineno))
    if not commands:
        raise ParseError("empty program", 1, 1)
    return TransitionProgram(tuple(commands))


def _parse_line(line: str, lineno: int) -> Command:
    m = _HEAD.match(line)
    if not m:
        raise ParseError("expected a command name", lineno, len(line) - len(line.lstrip()) + 1)
    name = m.group(1).lower()
    if name not in _SIGNATURES:
        raise ParseError(f"unknown command {m.group(1)!r}", lineno, m.start(1) + 1)
    args: dict[str, tuple[str, int]] = {}
    pos = m.end()
    while True:
        am = _ARG.match(line, pos)
        if not am:
            break
        key = am.group(1).lower()
        if key not in _SIGNATURES[name]:
            raise ParseError(f"{name} takes no argument {am.group(1)!r}", lineno, am.start(1) + 1)
        if key in args:
            raise ParseError(f"duplicate argument {key!r}", lineno, am.start(1) + 1)
        args[key] = (am.group(2), am.start(2) + 1)
        pos = am.end()
    if not _TRAIL.match(line, pos):
        raise ParseError("unexpected text", lineno, pos + 1 + (len(line[pos:]) - len(line[pos:].lstrip())))
    missing = [k for k in _SIGNATURES[name] if k not in args]
    if missing:
        expected = ", ".join(_SIGNATURES[name])
        raise ParseError(f"arity mismatch: {name} expects {expected}; missing {', '.join(missing)}", lineno, m.start(1) + 1)

    if name == "release_gripper":
        return ReleaseGripper()
    if name == "translate":
        axis_text, col = args["axis"]
        axis = axis_text.lower()
        if axis not in AXES:
            raise ParseError(f"unknown axis {axis_text!r}", lineno, col)
        delta = _number(*args["delta"], lineno)
        if abs(delta) > MAX_DELTA:
            raise ParseError(f"delta {delta} out of range [-{MAX_DELTA}, {MAX_DELTA}]", lineno, args["delta"][1])
        return Translate(axis, delta)
    if name == "lift_to_safe":
        height = _number(*args["height"], lineno)
        if height < 0:
            raise ParseError(f"height {height} must be non-negative", lineno, args["height"][1])
        return LiftToSafe(height)
    target_text, tcol = args["target"]
    values = _vector(target_text, tcol, lineno)
    if len(values) < 2:
        raise ParseError("target needs at least one joint and a gripper value", lineno, tcol)
    if not 0.0 <= values[-1] <= 1.0:
        raise ParseError(f"gripper value {values[-1]} out of range [0, 1]", lineno, tcol)
    steps_text, scol = args["steps"]
    if not re.fullmatch(r"\+?\d+", steps_text):
        raise ParseError(f"steps must be a positive integer, got {steps_text!r}", lineno, scol)
    steps = int(steps_text)
    if not 1 <= steps <= MAX_STEPS:
        raise ParseError(f"steps {steps} out of range [1, {MAX_STEPS}]", lineno, scol)
    return RecoverJoints(JointConfiguration.from_list(values), steps)


def _number(text: str, col: int, lineno: int) -> float:
    if not _NUMBER.match(text):
        raise ParseError(f"expected a decimal number, got {text!r}", lineno, col)
    return float(text)


def _vector(text: str, col: int, lineno: int) -> list[float]:
    inner = text[1:-1]
    if not inner.strip():
        return []
    out = []
    offset = col + 1
    for part in inner.split(","):
        stripped = part.strip()
        out.append(_number(stripped, offset + (len(part) - len(part.lstrip())), lineno))
        offset += len(part) + 1
    return out


# kinematic planning shared by validate and interpret ------------------------


@dataclass
class _Pose:
    joints: tuple[float, ...]
    gripper: float
    holding: bool


def _plan(cmd: Command, pose: _Pose, scenario: ScenarioSpec) -> list[Action]:
    """Per-step actions for one command from ``pose``; ``pose`` is advanced in place."""
    dof = scenario.dof
    zero = (0.0,) * dof
    if isinstance(cmd, ReleaseGripper):
        pose.gripper, pose.holding = 1.0, False
        return [Action(zero, "open")]
    if isinstance(cmd, (Translate, LiftToSafe)):
        if isinstance(cmd, Translate):
            d = [0.0, 0.0, 0.0]
            d[AXES.index(cmd.axis)] = cmd.delta
        else:
            d = [0.0, 0.0, cmd.height - scenario.effector_of(pose.joints)[2]]
        dist = math.sqrt(sum(v * v for v in d))
        if dist == 0.0:
            return []
        dq = scenario.joint_delta_for(d)
        n = max(
            math.ceil(dist / scenario.effector_step - 1e-9),
            math.ceil(max(abs(v) for v in dq) / scenario.max_step_delta - 1e-9),
            1,
        )
        inc = tuple(v / n for v in dq)
        actions = [Action(inc, "hold") for _ in range(n)]
        for _ in range(n):
            pose.joints = scenario.clamp([q + v for q, v in zip(pose.joints, inc)])
        return actions
    assert isinstance(cmd, RecoverJoints)
    target = cmd.target.joints
    n = cmd.steps
    actions = []
    cur = list(pose.joints)
    start = tuple(pose.joints)
    for k in range(1, n + 1):
        if k < n:
            want = [s + (t - s) * k / n for s, t in zip(start, target)]
        else:
            want = list(target)
        inc = tuple(w - c for w, c in zip(want, cur))
        cmd_g = "hold"
        if k == 1 and cmd.target.gripper >= 0.5 > pose.gripper:
            cmd_g = "open"
        if k == n and cmd.target.gripper < 0.5 <= pose.gripper:
            cmd_g = "close"
        actions.append(Action(inc, cmd_g))
        cur = list(scenario.clamp([c + v for c, v in zip(cur, inc)]))
    pose.joints = tuple(cur)
    if actions[0].gripper_command == "open":
        pose.gripper, pose.holding = 1.0, False
    elif actions[-1].gripper_command == "close":
        pose.gripper = 0.0
    return actions


# validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    rule: str
    index: int | None
    message: str

    def __str__(self) -> str:
        where = f"command {self.index + 1}" if self.index is not None else "program"
        return f"[{self.rule}] {where}: {self.message}"


def validate(
    program: TransitionProgram,
    state: WorldState,
    scenario: ScenarioSpec,
    max_commands: int = DEFAULT_MAX_COMMANDS,
) -> list[Violation]:
    """Static safety check against the current world. An empty list means ok."""
    out: list[Violation] = []
    cmds = program.commands
    if len(cmds) > max_commands:
        out.append(Violation(TOO_LONG, None, f"{len(cmds)} commands exceed the limit of {max_commands}"))
    if not any(isinstance(c, RecoverJoints) for c in cmds):
        out.append(Violation(NO_RECOVERY, None, "program has no recover_joints; the target state is never restored"))

    pose = _Pose(state.arm.joints, state.arm.gripper, state.effector.holding is not None)
    held = state.effector.holding
    objects = dict(state.objects)
    released = False
    lift_height = -math.inf
    z_lo, z_hi = scenario.workspace.lo[2], scenario.workspace.hi[2]
    for i, cmd in enumerate(cmds):
        if isinstance(cmd, RecoverJoints):
            if pose.holding and not released:
                out.append(Violation(RELEASE_FIRST, i, "recover_joints while holding an object; release_gripper first"))
            if cmd.target.dof != scenario.dof:
                out.append(Violation(OUT_OF_BOUNDS, i, f"target has {cmd.target.dof} joints, robot has {scenario.dof}"))
                break
            if not scenario.within_limits(cmd.target.joints):
                out.append(Violation(OUT_OF_BOUNDS, i, "target outside joint limits"))
                break
            worst = max(abs(t - q) for t, q in zip(cmd.target.joints, pose.joints)) / cmd.steps
            if worst > scenario.max_step_delta + 1e-12:
                out.append(Violation(STEP_LIMIT, i, f"{cmd.steps} steps need {worst:.4f} rad per step"))
        if isinstance(cmd, LiftToSafe) and not z_lo <= cmd.height <= z_hi:
            out.append(Violation(OUT_OF_BOUNDS, i, f"height {cmd.height} outside scene bounds [{z_lo}, {z_hi}]"))
        if isinstance(cmd, ReleaseGripper):
            released = True

        waypoints = [scenario.effector_of(pose.joints)]
        joints = pose.joints
        for action in _plan(cmd, pose, scenario):
            joints = scenario.clamp([q + d for q, d in zip(joints, action.joint_delta)])
            waypoints.append(scenario.effector_of(joints))
            # track what the gripper carries so a later recover_joints is judged correctly
            if action.gripper_command == "open" and held is not None:
                objects[held] = ObjectPose(waypoints[-1], None)
                held = None
            elif action.gripper_command == "close" and held is None:
                held = graspable_near(scenario, objects, waypoints[-1])
                if held is not None:
                    released = False
        pose.holding = held is not None
        for box in state.keep_out:
            if not any(box.segment_hits(a, b) for a, b in zip(waypoints, waypoints[1:])):
                continue
            if lift_height >= box.top:
                out.append(Violation(PATH_COLLISION, i, f"path cuts through keep-out box {box.name!r} on the way down"))
            else:
                out.append(Violation(RETREAT_FIRST, i, f"path crosses keep-out box {box.name!r} without lifting above {box.top}"))
        if isinstance(cmd, LiftToSafe):
            lift_height = max(lift_height, cmd.height)
    return out


# interpretation -------------------------------------------------------------


@dataclass
class InterpretResult:
    state: WorldState
    trace: ActionTrace
    faults: list[InterpreterFault] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.faults


def interpret(
    program: TransitionProgram,
    state: WorldState,
    scenario: ScenarioSpec,
    task_index: int = 0,
) -> InterpretResult:
    """Execute a validated program step by step through the simulator."""
    trace = ActionTrace()
    faults: list[InterpreterFault] = []
    had_collision = state.collision is not None
    for i, cmd in enumerate(program.commands):
        if isinstance(cmd, RecoverJoints) and state.effector.holding is not None:
            faults.append(InterpreterFault("gripper_conflict", "recover_joints while holding an object", i))
            break
        pose = _Pose(state.arm.joints, state.arm.gripper, state.effector.holding is not None)
        actions = _plan(cmd, pose, scenario)
        if any(abs(d) > scenario.max_step_delta + 1e-12 for a in actions for d in a.joint_delta):
            faults.append(InterpreterFault("step_limit", "per-step increment above max_step_delta", i))
            break
        for action in actions:
            trace.append(state.step_count, action, TRANSITION, task_index)
            state = world_step(scenario, state, action)
        if not had_collision and state.collision is not None:
            faults.append(
                InterpreterFault("collision", f"effector entered keep-out box {state.collision.box!r}", i)
            )
            had_collision = True
        if isinstance(cmd, RecoverJoints):
            err = max(abs(a - b) for a, b in zip(state.arm.joints, cmd.target.joints))
            if err > 1e-9:
                faults.append(InterpreterFault("terminal_mismatch", f"joints off target by {err:.3g} rad", i))
    return InterpretResult(state, trace, faults)
