"""Scene initialization, stepping and success evaluation."""

from __future__ import annotations

from typing import Any, Mapping

import numpy as np

from scivla.errors import ActionError, ConfigError
from scivla.geometry import Box, Vec3
from scivla.sim.scenario import ScenarioSpec, SuccessPredicate
from scivla.sim.state import (
    Action,
    CollisionFault,
    EffectorState,
    JointConfiguration,
    ObjectPose,
    ObservationSummary,
    WorldState,
)

_OPEN_THRESHOLD = 0.5
_STEP_TOLERANCE = 1e-12


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for an arbitrary (possibly negative) 64-bit seed plus sub-stream ids."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) % 2**64, *stream]))


def sample_box(box: Box, rng: np.random.Generator) -> Vec3:
    u = rng.random(3)
    # lo + u*(hi-lo) keeps a zero-volume box exactly at its center
    return tuple(float(lo + ui * (hi - lo)) for lo, ui, hi in zip(box.lo, u, box.hi))  # type: ignore[return-value]


def region_of(scenario: ScenarioSpec, position: Vec3) -> str | None:
    for name in sorted(scenario.regions):
        if scenario.regions[name].contains(position):
            return name
    return None


def init_scene(scenario: ScenarioSpec, seed: int, perturbation: float | None = None) -> WorldState:
    """Sample a fresh scene. The same (scenario, seed, perturbation) always gives the same state."""
    rng = make_rng(seed, 0)
    objects = {}
    for oid in sorted(scenario.objects):
        pos = sample_box(scenario.objects[oid].spawn, rng)
        objects[oid] = ObjectPose(pos, region_of(scenario, pos))
    amp = scenario.perturbation if perturbation is None else perturbation
    if amp < 0:
        raise ConfigError("must be non-negative", "perturbation")
    noise = rng.uniform(-amp, amp, scenario.dof) if amp > 0 else np.zeros(scenario.dof)
    joints = scenario.clamp([q + float(n) for q, n in zip(scenario.home.joints, noise)])
    return WorldState(
        arm=JointConfiguration(joints, scenario.home.gripper),
        effector=EffectorState(scenario.effector_of(joints), None),
        objects=objects,
        instruments={k: dict(v) for k, v in scenario.initial_latches.items()},
        keep_out=scenario.keep_out,
        step_count=0,
        collision=None,
    )


def apply_setup(
    scenario: ScenarioSpec,
    state: WorldState,
    setup: Mapping[str, Any],
    rng: np.random.Generator,
    arm: JointConfiguration | None = None,
) -> WorldState:
    """Override latches, object placement and arm pose, e.g. to stage a demonstration."""
    instruments = {k: dict(v) for k, v in state.instruments.items()}
    for key, value in (setup.get("latches") or {}).items():
        iid, _, lname = str(key).partition(".")
        instruments[iid][lname] = str(value)
    objects = dict(state.objects)
    for oid in sorted(setup.get("objects") or {}):
        spec = setup["objects"][oid]
        if isinstance(spec, (list, tuple)):
            box = Box(oid, tuple(spec), tuple(spec))  # type: ignore[arg-type]
        else:
            box = Box(oid, tuple(spec["min"]), tuple(spec["max"]))  # type: ignore[arg-type]
        pos = sample_box(box, rng)
        objects[oid] = ObjectPose(pos, region_of(scenario, pos))
    arm = arm or state.arm
    return WorldState(
        arm=arm,
        effector=EffectorState(scenario.effector_of(arm.joints), None),
        objects=objects,
        instruments=instruments,
        keep_out=state.keep_out,
        step_count=state.step_count,
        collision=state.collision,
    )


def check_action(scenario: ScenarioSpec, action: Action) -> None:
    if len(action.joint_delta) != scenario.dof:
        raise ActionError(f"action has {len(action.joint_delta)} joint increments, scenario has {scenario.dof}")
    limit = scenario.max_step_delta + _STEP_TOLERANCE
    for i, d in enumerate(action.joint_delta):
        if not abs(d) <= limit:
            raise ActionError(f"joint {i} increment {d} exceeds max_step_delta {scenario.max_step_delta}")


def step(scenario: ScenarioSpec, state: WorldState, action: Action) -> WorldState:
    """Advance one control step.

    Collisions along the effector segment are recorded, never raised; the
    first fault sticks for the rest of the trial.
    """
    check_action(scenario, action)
    joints = scenario.clamp([q + d for q, d in zip(state.arm.joints, action.joint_delta)])
    old_pos = state.effector.position
    pos = scenario.effector_of(joints)

    collision = state.collision
    if collision is None:
        for box in state.keep_out:
            if box.segment_hits(old_pos, pos):
                collision = CollisionFault(state.step_count, box.name)
                break

    gripper = state.arm.gripper
    holding = state.effector.holding
    instruments: Mapping[str, Mapping[str, str]] = state.instruments
    objects = dict(state.objects)

    if action.gripper_command == "close":
        if gripper >= _OPEN_THRESHOLD and holding is None:
            holding = graspable_near(scenario, objects, pos)
            if holding is None:
                instruments = _actuate(scenario, instruments, pos)
        gripper = 0.0
    elif action.gripper_command == "open":
        if holding is not None:
            objects[holding] = ObjectPose(pos, region_of(scenario, pos))
            holding = None
        gripper = 1.0

    if holding is not None:
        objects[holding] = ObjectPose(pos, "effector")

    return WorldState(
        arm=JointConfiguration(joints, gripper),
        effector=EffectorState(pos, holding),
        objects=objects,
        instruments=instruments,
        keep_out=state.keep_out,
        step_count=state.step_count + 1,
        collision=collision,
    )


def _dist(a: Vec3, b: Vec3) -> float:
    return ((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2) ** 0.5


def graspable_near(scenario: ScenarioSpec, objects: Mapping[str, ObjectPose], pos: Vec3) -> str | None:
    best, best_d = None, float("inf")
    for oid in sorted(objects):
        spec = scenario.objects.get(oid)
        if spec is None or not spec.graspable:
            continue
        radius = spec.grasp_radius if spec.grasp_radius is not None else scenario.grasp_radius
        d = _dist(objects[oid].position, pos)
        if d <= radius and d < best_d:
            best, best_d = oid, d
    return best


def _actuate(scenario: ScenarioSpec, instruments: Mapping[str, Mapping[str, str]], pos: Vec3):
    changed = {k: dict(v) for k, v in instruments.items()}
    hit = False
    for c in scenario.controls:
        # condition is read from the pre-step latches so two toggles at one spot do not chain
        if instruments[c.instrument][c.latch] == c.when and _dist(c.position, pos) <= c.radius:
            changed[c.instrument][c.latch] = c.set
            hit = True
    return changed if hit else instruments


def evaluate(state: WorldState, predicate: SuccessPredicate) -> bool:
    args = predicate.args
    if predicate.kind == "object_in_region":
        pose = state.objects.get(args["object"])
        if pose is None:
            raise ConfigError(f"unknown object {args['object']!r}", "predicate")
        return predicate.region_box.contains(pose.position)
    if predicate.kind == "latch_equals":
        latches = state.instruments.get(args["instrument"])
        if latches is None or args["latch"] not in latches:
            raise ConfigError(f"unknown latch {args['instrument']}.{args['latch']}", "predicate")
        return latches[args["latch"]] == args["value"]
    if predicate.kind == "effector_in_region":
        return predicate.region_box.contains(state.effector.position)
    raise ConfigError(f"unknown predicate kind {predicate.kind!r}", "predicate")


def evaluate_all(state: WorldState, predicates) -> bool:
    return all(evaluate(state, p) for p in predicates)


def observe(state: WorldState, resolution: float = 1e-3) -> ObservationSummary:
    """Structured stand-in for the camera view; object positions are rounded to ``resolution``."""

    def coarse(p: Vec3) -> Vec3:
        return tuple(round(round(v / resolution) * resolution, 6) for v in p)  # type: ignore[return-value]

    return ObservationSummary(
        joints=state.arm.joints,
        gripper=state.arm.gripper,
        effector=state.effector.position,
        holding=state.effector.holding is not None,
        latches={k: dict(v) for k, v in state.instruments.items()},
        objects={k: coarse(v.position) for k, v in state.objects.items()},
    )
