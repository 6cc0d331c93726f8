"""Scenario documents: robot, scene layout, instruments and atomic tasks.

A scenario is a YAML (or JSON) mapping. ``extends: other.yaml`` deep-merges the
document over another scenario file, which is how the fixture scenes share
geometry while differing in initial instrument state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from scivla.errors import ConfigError
from scivla.geometry import Box, Vec3
from scivla.sim.state import JointConfiguration
from scivla.text import normalize_prompt

PREDICATE_KINDS = ("object_in_region", "latch_equals", "effector_in_region")


@dataclass(frozen=True)
class SuccessPredicate:
    kind: str
    args: Mapping[str, Any]
    region_box: Box | None = None

    def describe(self) -> str:
        return f"{self.kind}({', '.join(f'{k}={v}' for k, v in sorted(self.args.items()))})"


@dataclass(frozen=True)
class Control:
    """A spot where closing the gripper moves an instrument latch."""

    name: str
    instrument: str
    latch: str
    when: str
    set: str
    position: Vec3
    radius: float


@dataclass(frozen=True)
class ObjectSpec:
    spawn: Box
    graspable: bool = True
    grasp_radius: float | None = None


@dataclass(frozen=True)
class TaskSpec:
    prompt: str
    predicates: tuple[SuccessPredicate, ...]
    canonical: str
    start: JointConfiguration | None = None
    start_spread: float = 0.05
    setup: Mapping[str, Any] = field(default_factory=dict)
    script: tuple[Mapping[str, Any], ...] = ()

    @property
    def is_alias(self) -> bool:
        return self.canonical != self.prompt


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    dof: int
    joint_limits: tuple[tuple[float, float], ...]
    home: JointConfiguration
    effector_matrix: tuple[tuple[float, float, float], ...]
    effector_offset: Vec3
    workspace: Box
    regions: Mapping[str, Box]
    objects: Mapping[str, ObjectSpec]
    latches: Mapping[str, Mapping[str, tuple[str, ...]]]
    initial_latches: Mapping[str, Mapping[str, str]]
    controls: tuple[Control, ...]
    keep_out: tuple[Box, ...]
    tasks: Mapping[str, TaskSpec]
    max_step_delta: float = 0.05
    grasp_radius: float = 0.03
    effector_step: float = 0.02
    perturbation: float = 0.05
    axis_hints: Mapping[str, str] = field(default_factory=dict)
    source: str | None = None

    # kinematics -------------------------------------------------------

    def effector_of(self, joints: Sequence[float]) -> Vec3:
        x, y, z = self.effector_offset
        for q, (mx, my, mz) in zip(joints, self.effector_matrix):
            x += q * mx
            y += q * my
            z += q * mz
        return (x, y, z)

    def joint_delta_for(self, displacement: Sequence[float]) -> tuple[float, ...]:
        """Minimum-norm joint increment producing the given effector displacement."""
        return tuple(float(v) for v in self._pinv @ np.asarray(displacement, dtype=float))

    @property
    def _pinv(self) -> np.ndarray:
        cached = self.__dict__.get("_pinv_cache")
        if cached is None:
            cached = np.linalg.pinv(np.asarray(self.effector_matrix, dtype=float).T)
            object.__setattr__(self, "_pinv_cache", cached)
        return cached

    def clamp(self, joints: Sequence[float]) -> tuple[float, ...]:
        return tuple(min(max(q, lo), hi) for q, (lo, hi) in zip(joints, self.joint_limits))

    def within_limits(self, joints: Sequence[float]) -> bool:
        return all(lo <= q <= hi for q, (lo, hi) in zip(joints, self.joint_limits))

    def check_configuration(self, cfg: JointConfiguration, field_name: str = "configuration") -> None:
        if cfg.dof != self.dof:
            raise ConfigError(f"expected {self.dof} joints, got {cfg.dof}", field_name)
        if not self.within_limits(cfg.joints):
            raise ConfigError("joint outside declared limits", field_name)

    # tasks ------------------------------------------------------------

    def task(self, prompt: str) -> TaskSpec:
        key = normalize_prompt(prompt)
        try:
            return self.tasks[key]
        except KeyError:
            raise ConfigError(f"scenario {self.name!r} declares no task {key!r}", "tasks") from None

    def policy_prompt(self, prompt: str) -> str:
        """The prompt the policy was trained on for this (possibly aliased) task."""
        key = normalize_prompt(prompt)
        spec = self.tasks.get(key)
        return spec.canonical if spec else key

    def canonical_tasks(self) -> list[TaskSpec]:
        return [t for t in self.tasks.values() if not t.is_alias]

    def safe_height(self, margin: float = 0.05) -> float:
        return max((b.top for b in self.keep_out), default=self.workspace.lo[2]) + margin


# loading ----------------------------------------------------------------


def load_scenario(path: str | Path) -> ScenarioSpec:
    path = Path(path)
    doc = _load_doc(path, seen=())
    return scenario_from_dict(doc, source=str(path))


def _load_doc(path: Path, seen: tuple[Path, ...]) -> dict:
    resolved = path.resolve()
    if resolved in seen:
        raise ConfigError(f"circular extends via {path}", "extends")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}", "extends" if seen else "scenario") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", "scenario") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} is not a mapping", "scenario")
    parent = doc.pop("extends", None)
    if parent is None:
        return doc
    base = _load_doc(path.parent / parent, seen + (resolved,))
    return deep_merge(base, doc)


def deep_merge(base: Mapping, override: Mapping) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def scenario_from_dict(doc: Mapping[str, Any], source: str | None = None) -> ScenarioSpec:
    p = _Reader(doc)
    dof = p.int("joints", minimum=1)
    limits_raw = p.get("joint_limits")
    if limits_raw and not isinstance(limits_raw[0], (list, tuple)):
        limits_raw = [limits_raw] * dof
    if not isinstance(limits_raw, list) or len(limits_raw) != dof:
        raise ConfigError(f"expected {dof} [min, max] pairs", "joint_limits")
    limits = tuple((float(lo), float(hi)) for lo, hi in limits_raw)
    if any(lo > hi for lo, hi in limits):
        raise ConfigError("min above max", "joint_limits")

    emap = p.get("effector_map")
    matrix = emap.get("matrix") if isinstance(emap, Mapping) else None
    if not isinstance(matrix, list) or len(matrix) != dof or any(len(r) != 3 for r in matrix):
        raise ConfigError(f"matrix must be {dof} rows of 3", "effector_map")
    matrix_t = tuple((float(a), float(b), float(c)) for a, b, c in matrix)
    offset = p.vec3(emap, "offset", "effector_map.offset")
    if np.linalg.matrix_rank(np.asarray(matrix_t)) < 3:
        raise ConfigError("matrix must have rank 3", "effector_map")

    home = JointConfiguration(tuple(p.floats("home", dof)), float(doc.get("home_gripper", 1.0)))
    if not all(lo <= q <= hi for q, (lo, hi) in zip(home.joints, limits)):
        raise ConfigError("home outside joint limits", "home")

    workspace = p.box(p.get("workspace"), "workspace")
    regions = {name: p.box(spec, f"regions.{name}", name) for name, spec in (doc.get("regions") or {}).items()}

    objects = {}
    for oid, spec in (doc.get("objects") or {}).items():
        if not isinstance(spec, Mapping) or "spawn" not in spec:
            raise ConfigError("object needs a spawn region", f"objects.{oid}")
        objects[oid] = ObjectSpec(
            spawn=p.box(spec["spawn"], f"objects.{oid}.spawn", oid),
            graspable=bool(spec.get("graspable", True)),
            grasp_radius=float(spec["grasp_radius"]) if "grasp_radius" in spec else None,
        )

    latches: dict[str, dict[str, tuple[str, ...]]] = {}
    initial: dict[str, dict[str, str]] = {}
    controls: list[Control] = []
    grasp_radius = float(doc.get("grasp_radius", 0.03))
    for iid, spec in (doc.get("instruments") or {}).items():
        spec = spec or {}
        latches[iid], initial[iid] = {}, {}
        for lname, lspec in (spec.get("latches") or {}).items():
            values = tuple(str(v) for v in lspec.get("values", ()))
            init = str(lspec.get("initial", values[0] if values else ""))
            if not values or init not in values:
                raise ConfigError("latch needs values and an initial value among them", f"instruments.{iid}.{lname}")
            latches[iid][lname] = values
            initial[iid][lname] = init
        for i, cspec in enumerate(spec.get("controls") or ()):
            where = f"instruments.{iid}.controls[{i}]"
            lname = cspec.get("latch")
            if lname not in latches[iid]:
                raise ConfigError(f"unknown latch {lname!r}", where)
            for key in ("when", "set"):
                if str(cspec.get(key)) not in latches[iid][lname]:
                    raise ConfigError(f"{key} value not in latch enumeration", where)
            controls.append(
                Control(
                    name=str(cspec.get("name", f"{iid}.{lname}.{i}")),
                    instrument=iid,
                    latch=lname,
                    when=str(cspec["when"]),
                    set=str(cspec["set"]),
                    position=p.vec3(cspec, "position", where + ".position"),
                    radius=float(cspec.get("radius", grasp_radius)),
                )
            )

    keep_out = tuple(p.box(b, f"keep_out[{i}]", b.get("name", f"box{i}")) for i, b in enumerate(doc.get("keep_out") or ()))

    scenario = ScenarioSpec(
        name=str(doc.get("name", "scenario")),
        dof=dof,
        joint_limits=limits,
        home=home,
        effector_matrix=matrix_t,
        effector_offset=offset,
        workspace=workspace,
        regions=regions,
        objects=objects,
        latches=latches,
        initial_latches=initial,
        controls=tuple(controls),
        keep_out=keep_out,
        tasks={},
        max_step_delta=p.positive("max_step_delta", 0.05),
        grasp_radius=p.positive("grasp_radius", 0.03),
        effector_step=p.positive("effector_step", 0.02),
        perturbation=p.nonnegative("perturbation", 0.05),
        axis_hints={str(k): str(v) for k, v in (doc.get("axis_hints") or {}).items()},
        source=source,
    )
    tasks = _read_tasks(doc.get("tasks") or {}, scenario)
    object.__setattr__(scenario, "tasks", tasks)
    return scenario


def _read_tasks(raw: Mapping[str, Any], scenario: ScenarioSpec) -> dict[str, TaskSpec]:
    keyed = {normalize_prompt(k): v or {} for k, v in raw.items()}
    tasks: dict[str, TaskSpec] = {}
    for prompt, spec in keyed.items():
        where = f"tasks[{prompt!r}]"
        if not prompt:
            raise ConfigError("empty task prompt", "tasks")
        preds = spec.get("predicate")
        if isinstance(preds, Mapping):
            preds = [preds]
        if not preds:
            raise ConfigError("task needs at least one success predicate", where + ".predicate")
        predicates = tuple(parse_predicate(pr, scenario, f"{where}.predicate[{i}]") for i, pr in enumerate(preds))
        canonical = normalize_prompt(spec.get("same_as", prompt))
        if canonical != prompt:
            target = keyed.get(canonical)
            if target is None or "same_as" in target:
                raise ConfigError(f"same_as must name a non-alias task, got {canonical!r}", where + ".same_as")
            tasks[prompt] = TaskSpec(prompt, predicates, canonical)
            continue
        start = _read_start(spec.get("start"), scenario, where + ".start")
        script = spec.get("script") or ()
        if not isinstance(script, list):
            raise ConfigError("script must be a list of steps", where + ".script")
        setup = spec.get("setup") or {}
        _check_setup(setup, scenario, where + ".setup")
        tasks[prompt] = TaskSpec(
            prompt=prompt,
            predicates=predicates,
            canonical=prompt,
            start=start,
            start_spread=float(spec.get("start_spread", 0.05)),
            setup=setup,
            script=tuple(script),
        )
    return tasks


def _read_start(raw: Any, scenario: ScenarioSpec, where: str) -> JointConfiguration | None:
    if raw is None:
        return scenario.home
    if not isinstance(raw, Mapping):
        raise ConfigError("start must be {joints: [...]} or {effector: [x, y, z]}", where)
    gripper = float(raw.get("gripper", scenario.home.gripper))
    if "joints" in raw:
        cfg = JointConfiguration(tuple(raw["joints"]), gripper)
    elif "effector" in raw:
        target = _Reader.vec3(raw, "effector", where)
        here = scenario.effector_of(scenario.home.joints)
        delta = scenario.joint_delta_for([t - h for t, h in zip(target, here)])
        cfg = JointConfiguration(tuple(q + d for q, d in zip(scenario.home.joints, delta)), gripper)
    else:
        raise ConfigError("start must give joints or effector", where)
    scenario.check_configuration(cfg, where)
    return cfg


def _check_setup(setup: Mapping[str, Any], scenario: ScenarioSpec, where: str) -> None:
    for key, value in (setup.get("latches") or {}).items():
        iid, _, lname = str(key).partition(".")
        if lname not in scenario.latches.get(iid, {}) or str(value) not in scenario.latches[iid][lname]:
            raise ConfigError(f"bad latch setting {key}={value}", where)
    for oid in setup.get("objects") or {}:
        if oid not in scenario.objects:
            raise ConfigError(f"unknown object {oid!r}", where)


def parse_predicate(raw: Mapping[str, Any], scenario: ScenarioSpec, where: str) -> SuccessPredicate:
    kind = raw.get("kind") if isinstance(raw, Mapping) else None
    if kind not in PREDICATE_KINDS:
        raise ConfigError(f"kind must be one of {PREDICATE_KINDS}", where)
    args = {k: v for k, v in raw.items() if k != "kind"}
    box = None
    if kind in ("object_in_region", "effector_in_region"):
        if args.get("region") not in scenario.regions:
            raise ConfigError(f"unknown region {args.get('region')!r}", where)
        box = scenario.regions[args["region"]]
    if kind == "object_in_region" and args.get("object") not in scenario.objects:
        raise ConfigError(f"unknown object {args.get('object')!r}", where)
    if kind == "latch_equals":
        iid, lname, value = args.get("instrument"), args.get("latch"), str(args.get("value"))
        if lname not in scenario.latches.get(iid, {}):
            raise ConfigError(f"unknown latch {iid}.{lname}", where)
        if value not in scenario.latches[iid][lname]:
            raise ConfigError(f"value {value!r} not in latch enumeration", where)
        args["value"] = value
    return SuccessPredicate(kind, args, box)


class _Reader:
    def __init__(self, doc: Mapping[str, Any]) -> None:
        if not isinstance(doc, Mapping):
            raise ConfigError("scenario must be a mapping", "scenario")
        self.doc = doc

    def get(self, key: str) -> Any:
        if key not in self.doc:
            raise ConfigError("missing", key)
        return self.doc[key]

    def int(self, key: str, minimum: int) -> int:
        value = self.get(key)
        if not isinstance(value, int) or value < minimum:
            raise ConfigError(f"must be an integer >= {minimum}", key)
        return value

    def floats(self, key: str, n: int) -> list[float]:
        value = self.get(key)
        if not isinstance(value, list) or len(value) != n:
            raise ConfigError(f"expected {n} numbers", key)
        return [float(v) for v in value]

    def positive(self, key: str, default: float) -> float:
        value = float(self.doc.get(key, default))
        if not value > 0 or math.isinf(value):
            raise ConfigError("must be positive", key)
        return value

    def nonnegative(self, key: str, default: float) -> float:
        value = float(self.doc.get(key, default))
        if not value >= 0:
            raise ConfigError("must be non-negative", key)
        return value

    @staticmethod
    def vec3(mapping: Mapping[str, Any], key: str, where: str) -> Vec3:
        value = mapping.get(key) if isinstance(mapping, Mapping) else None
        if not isinstance(value, (list, tuple)) or len(value) != 3:
            raise ConfigError("expected [x, y, z]", where)
        return (float(value[0]), float(value[1]), float(value[2]))

    @staticmethod
    def box(spec: Any, where: str, name: str | None = None) -> Box:
        if isinstance(spec, (list, tuple)) and len(spec) == 3:
            p = _Reader.vec3({"at": spec}, "at", where)
            return Box(name or where, p, p)
        if not isinstance(spec, Mapping):
            raise ConfigError("expected {min, max} or a point", where)
        lo, hi = _Reader.vec3(spec, "min", where + ".min"), _Reader.vec3(spec, "max", where + ".max")
        if any(a > b for a, b in zip(lo, hi)):
            raise ConfigError("min above max", where)
        return Box(name or where, lo, hi)
