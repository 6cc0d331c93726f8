"""Demonstration generation, seeded trial harness and success-rate reports."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping

import yaml

from scivla.agent import REMOTE, AgentConfig
from scivla.client import ChatClient
from scivla.demos import DemoStore, Demonstration, load_store
from scivla.errors import ConfigError, SciVLAError
from scivla.orchestrator import MODES, RunOutcome, TaskSequence, load_sequence, run
from scivla.policy import DistributionGate, ReplayPolicy
from scivla.retrieval import DEFAULT_MATCH_THRESHOLD, JaccardMatcher, LLMMatcher
from scivla.sim.scenario import ScenarioSpec, TaskSpec, load_scenario
from scivla.sim.state import Action, JointConfiguration, WorldState
from scivla.sim.world import apply_setup, evaluate_all, init_scene, make_rng, step

log = logging.getLogger(__name__)

DEFAULT_DEMO_COUNT = 100


# demonstrations -----------------------------------------------------------


def _script_target(state: WorldState, scenario: ScenarioSpec, spec: Any, where: str) -> tuple[float, float, float]:
    if isinstance(spec, (list, tuple)):
        base, offset = spec, (0.0, 0.0, 0.0)
    elif isinstance(spec, Mapping):
        offset = spec.get("offset", (0.0, 0.0, 0.0))
        if "object" in spec:
            if spec["object"] not in state.objects:
                raise ConfigError(f"unknown object {spec['object']!r}", where)
            base = state.objects[spec["object"]].position
        elif "region" in spec:
            if spec["region"] not in scenario.regions:
                raise ConfigError(f"unknown region {spec['region']!r}", where)
            base = scenario.regions[spec["region"]].center
        elif "control" in spec:
            found = [c for c in scenario.controls if c.name == spec["control"]]
            if not found:
                raise ConfigError(f"unknown control {spec['control']!r}", where)
            base = found[0].position
        elif "point" in spec:
            base = spec["point"]
        else:
            raise ConfigError("move needs object, region, control or point", where)
    else:
        raise ConfigError("bad move target", where)
    return tuple(float(b) + float(o) for b, o in zip(base, offset))  # type: ignore[return-value]


def run_script(scenario: ScenarioSpec, task: TaskSpec, state: WorldState) -> list[WorldState]:
    """Execute a task's waypoint script; returns every visited state, starting with ``state``."""
    states = [state]
    zero = (0.0,) * scenario.dof
    for k, item in enumerate(task.script):
        where = f"tasks[{task.prompt!r}].script[{k}]"
        if not isinstance(item, Mapping) or len(item) != 1:
            raise ConfigError("each script step is a single-key mapping", where)
        (verb, arg), = item.items()
        if verb == "gripper":
            if arg not in ("open", "close"):
                raise ConfigError("gripper must be open or close", where)
            state = step(scenario, state, Action(zero, arg))
            states.append(state)
        elif verb == "wait":
            for _ in range(int(arg)):
                state = step(scenario, state, Action(zero, "hold"))
                states.append(state)
        elif verb == "move":
            goal = _script_target(state, scenario, arg, where)
            here = state.effector.position
            dq = scenario.joint_delta_for([g - h for g, h in zip(goal, here)])
            n = math.ceil(max(abs(v) for v in dq) / scenario.max_step_delta - 1e-9)
            for _ in range(n):
                state = step(scenario, state, Action(tuple(v / n for v in dq), "hold"))
                states.append(state)
            if max(abs(g - h) for g, h in zip(goal, state.effector.position)) > 1e-6:
                raise ConfigError("move target unreachable within joint limits", where)
        else:
            raise ConfigError(f"unknown script verb {verb!r}", where)
    return states


def generate_demos(scenario: ScenarioSpec, prompt: str, count: int, seed: int) -> list[Demonstration]:
    """Scripted demonstrations from randomized starts in randomized scenes.

    Each demo is checked against the task predicate before it is kept, so a
    script that does not achieve its task is a configuration error.
    """
    task = scenario.task(prompt)
    if task.is_alias or not task.script:
        raise ConfigError(f"task {task.prompt!r} has no demonstration script", "tasks.script")
    if count < 0:
        raise ConfigError("must be >= 0", "count")
    demos = []
    for k in range(count):
        rng = make_rng(seed, 2, k)
        scene_seed = int(rng.integers(0, 2**63))
        base = init_scene(scenario, scene_seed, perturbation=0.0)
        spread = rng.uniform(-task.start_spread, task.start_spread, scenario.dof)
        start = JointConfiguration(
            scenario.clamp([q + float(s) for q, s in zip(task.start.joints, spread)]), task.start.gripper
        )
        state = apply_setup(scenario, base, task.setup, rng, arm=start)
        states = run_script(scenario, task, state)
        final = states[-1]
        if final.collision is not None:
            raise ConfigError(f"demo script collides with {final.collision.box!r}", f"tasks[{task.prompt!r}].script")
        if not evaluate_all(final, task.predicates):
            raise ConfigError("demo script does not satisfy the task predicate", f"tasks[{task.prompt!r}].script")
        demos.append(
            Demonstration.from_configs(
                task.prompt,
                [s.arm for s in states],
                {"scene_seed": scene_seed, "episode": k, "scenario": scenario.name},
            )
        )
    return demos


def demos_for_scenario(scenario: ScenarioSpec, count: int, seed: int) -> DemoStore:
    demos: list[Demonstration] = []
    for i, task in enumerate(scenario.canonical_tasks()):
        demos.extend(generate_demos(scenario, task.prompt, count, seed + 7919 * i))
    return DemoStore(demos)


@lru_cache(maxsize=16)
def _cached_demos(path: str, count: int, seed: int) -> DemoStore:
    return demos_for_scenario(load_scenario(path), count, seed)


# bench spec ---------------------------------------------------------------


@dataclass(frozen=True)
class DemoSource:
    scenario: str | None = None
    path: str | None = None
    count: int = DEFAULT_DEMO_COUNT
    seed: int = 0

    def load(self) -> DemoStore:
        if self.path:
            return load_store(self.path)
        return _cached_demos(str(self.scenario), self.count, self.seed)

    def to_dict(self) -> dict:
        if self.path:
            return {"path": self.path}
        return {"scenario": self.scenario, "count": self.count, "seed": self.seed}


@dataclass(frozen=True)
class BenchSpec:
    scenario: str
    sequence: TaskSequence
    trials: int = 20
    perturbation: float = 0.05
    modes: tuple[str, ...] = MODES
    seed_base: int = 0
    demos: tuple[DemoSource, ...] = ()
    epsilon: float = 0.15
    jitter_amp: float = 0.01
    agent: AgentConfig = field(default_factory=AgentConfig)
    matcher: str = "jaccard"
    match_threshold: float = DEFAULT_MATCH_THRESHOLD
    workers: int = 1

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ConfigError("must be >= 1", "trials")
        if self.perturbation < 0:
            raise ConfigError("must be >= 0", "perturbation")
        if not self.modes or any(m not in MODES for m in self.modes):
            raise ConfigError(f"modes must be a non-empty subset of {MODES}", "modes")
        if self.matcher not in ("jaccard", "remote"):
            raise ConfigError("must be jaccard or remote", "matcher")
        if self.workers < 1:
            raise ConfigError("must be >= 1", "workers")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: str | Path = ".") -> "BenchSpec":
        base = Path(base_dir)

        def resolve(p: str) -> str:
            return str((base / p)) if not Path(p).is_absolute() else p

        if "scenario" not in data:
            raise ConfigError("missing", "scenario")
        scenario = resolve(str(data["scenario"]))
        seq = data.get("sequence")
        if isinstance(seq, str):
            sequence = load_sequence(resolve(seq))
        elif isinstance(seq, Mapping):
            sequence = TaskSequence.from_dict(seq)
        else:
            raise ConfigError("must be a file path or an inline mapping", "sequence")
        sources = []
        for i, d in enumerate(data.get("demos") or [{}]):
            if not isinstance(d, Mapping):
                raise ConfigError("each demo source is a mapping", f"demos[{i}]")
            if "path" in d:
                sources.append(DemoSource(path=resolve(str(d["path"]))))
            else:
                sources.append(
                    DemoSource(
                        scenario=resolve(str(d["scenario"])) if "scenario" in d else scenario,
                        count=int(d.get("count", DEFAULT_DEMO_COUNT)),
                        seed=int(d.get("seed", 0)),
                    )
                )
        policy = data.get("policy") or {}
        modes = data.get("modes", list(MODES))
        if isinstance(modes, str):
            modes = list(MODES) if modes == "both" else [modes]
        known = {
            "scenario", "sequence", "trials", "perturbation", "modes", "seed_base", "demos", "policy",
            "agent", "matcher", "match_threshold", "workers",
        }
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", "bench")
        return cls(
            scenario=scenario,
            sequence=sequence,
            trials=int(data.get("trials", 20)),
            perturbation=float(data.get("perturbation", 0.05)),
            modes=tuple(modes),
            seed_base=int(data.get("seed_base", 0)),
            demos=tuple(sources),
            epsilon=float(policy.get("epsilon", 0.15)),
            jitter_amp=float(policy.get("jitter_amp", 0.01)),
            agent=AgentConfig.from_dict(data.get("agent")),
            matcher=str(data.get("matcher", "jaccard")),
            match_threshold=float(data.get("match_threshold", DEFAULT_MATCH_THRESHOLD)),
            workers=int(data.get("workers", 1)),
        )

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "sequence": self.sequence.to_dict(),
            "trials": self.trials,
            "perturbation": self.perturbation,
            "modes": list(self.modes),
            "seed_base": self.seed_base,
            "demos": [d.to_dict() for d in self.demos],
            "policy": {"epsilon": self.epsilon, "jitter_amp": self.jitter_amp},
            "agent": self.agent.to_dict(),
            "matcher": self.matcher,
            "match_threshold": self.match_threshold,
        }


def load_bench_spec(path: str | Path) -> BenchSpec:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}", "spec") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", "spec") from None
    if not isinstance(data, Mapping):
        raise ConfigError("bench spec must be a mapping", "spec")
    return BenchSpec.from_dict(data, path.parent)


# reports --------------------------------------------------------------------


@dataclass
class ModeSummary:
    successes: list[int]
    counted: int
    excluded: int
    all_success: int

    def rates(self) -> list[float]:
        return [s / self.counted if self.counted else 0.0 for s in self.successes]

    def mean_rate(self) -> float:
        r = self.rates()
        return sum(r) / len(r) if r else 0.0


@dataclass
class TrialDigest:
    mode: str
    trial: int
    seed: int
    successes: list[bool]
    excluded: bool
    reason: str | None
    faults: int
    digest: str

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class BenchReport:
    config: dict
    prompts: list[str]
    modes: dict[str, ModeSummary]
    trials: list[TrialDigest]

    def to_dict(self) -> dict:
        out = {
            "config": self.config,
            "prompts": self.prompts,
            "modes": {m: vars(s).copy() for m, s in self.modes.items()},
            "trials": [t.to_dict() for t in self.trials],
        }
        if "baseline" in self.modes and "sci" in self.modes:
            b, s = self.modes["baseline"].rates(), self.modes["sci"].rates()
            out["delta"] = {
                "per_task_pp": [round(100 * (y - x), 6) for x, y in zip(b, s)],
                "mean_pp": round(100 * (self.modes["sci"].mean_rate() - self.modes["baseline"].mean_rate()), 6),
            }
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BenchReport":
        return cls(
            config=data["config"],
            prompts=list(data["prompts"]),
            modes={m: ModeSummary(**s) for m, s in data["modes"].items()},
            trials=[TrialDigest(**t) for t in data["trials"]],
        )

    def __eq__(self, other: object) -> bool:
        return isinstance(other, BenchReport) and self.to_dict() == other.to_dict()


def format_rate(successes: int, total: int) -> str:
    if total == 0:
        return f"{successes}/0 (n/a)"
    pct = (200 * successes + total) // (2 * total)  # round half up, integer-only
    return f"{successes}/{total} ({pct}%)"


def render_report(report: BenchReport, fmt: str = "table") -> str:
    if fmt == "machine":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if fmt != "table":
        raise ValueError(f"unknown format {fmt!r}")
    n = len(report.prompts)
    header = ["mode"] + [f"task {i + 1}" for i in range(n)] + ["all tasks", "excluded"]
    rows = []
    for mode, s in report.modes.items():
        rows.append(
            [mode]
            + [format_rate(x, s.counted) for x in s.successes]
            + [format_rate(s.all_success, s.counted), str(s.excluded)]
        )
    widths = [max(len(r[c]) for r in [header] + rows) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in [header] + rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    doc = report.to_dict()
    if "delta" in doc:
        per = ", ".join(f"{d:+.0f}" for d in doc["delta"]["per_task_pp"])
        lines.append("")
        lines.append(f"sci - baseline (pp): per task [{per}], mean {doc['delta']['mean_pp']:+.1f}")
    lines.append("")
    for i, p in enumerate(report.prompts):
        lines.append(f"task {i + 1}: {p}")
    return "\n".join(lines) + "\n"


def parse_machine_report(text: str) -> BenchReport:
    return BenchReport.from_dict(json.loads(text))


# harness ----------------------------------------------------------------------


@dataclass
class BenchContext:
    """Loaded, validated inputs shared (read-only) by every trial."""

    spec: BenchSpec
    scenario: ScenarioSpec
    store: DemoStore
    client: ChatClient | None = None


def prepare(spec: BenchSpec) -> BenchContext:
    scenario = load_scenario(spec.scenario)
    store = DemoStore()
    for src in spec.demos:
        store = store + src.load()
    if store.dof is not None and store.dof != scenario.dof:
        raise ConfigError(f"demos have {store.dof} joints, scenario has {scenario.dof}", "demos")
    for p in spec.sequence.prompts:
        scenario.task(p)
        if store.index.ids_for(scenario.policy_prompt(p)) is None:
            raise ConfigError(f"no demonstrations for {scenario.policy_prompt(p)!r}", "demos")
    client = None
    if spec.agent.backend == REMOTE or spec.matcher == "remote":
        client = ChatClient(spec.agent.remote)
    return BenchContext(spec, scenario, store, client)


def run_trial(ctx: BenchContext, mode: str, trial: int) -> RunOutcome:
    spec = ctx.spec
    policy = ReplayPolicy(
        ctx.store,
        DistributionGate(spec.epsilon),
        jitter_amp=spec.jitter_amp,
        max_step_delta=ctx.scenario.max_step_delta,
    )
    matcher = LLMMatcher(ctx.client) if spec.matcher == "remote" else JaccardMatcher()
    return run(
        spec.sequence,
        ctx.scenario,
        spec.seed_base + trial,
        mode,
        policy,
        ctx.store,
        spec.agent,
        perturbation=spec.perturbation,
        matcher=matcher,
        match_threshold=spec.match_threshold,
        client=ctx.client,
    )


def run_bench(spec: BenchSpec, workers: int | None = None) -> BenchReport:
    ctx = prepare(spec)
    jobs = [(mode, t) for mode in spec.modes for t in range(spec.trials)]
    workers = workers or spec.workers
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda job: run_trial(ctx, *job), jobs))
    else:
        outcomes = [run_trial(ctx, *job) for job in jobs]
    if ctx.client is not None:
        ctx.client.close()
    return assemble_report(spec, jobs, outcomes)


def assemble_report(spec: BenchSpec, jobs, outcomes: list[RunOutcome]) -> BenchReport:
    n = len(spec.sequence)
    modes: dict[str, ModeSummary] = {m: ModeSummary([0] * n, 0, 0, 0) for m in spec.modes}
    digests = []
    for (mode, t), out in zip(jobs, outcomes):
        s = modes[mode]
        if out.excluded:
            s.excluded += 1
        else:
            s.counted += 1
            for i, ok in enumerate(out.successes):
                s.successes[i] += int(ok)
            s.all_success += int(all(out.successes))
        digests.append(
            TrialDigest(
                mode=mode,
                trial=t,
                seed=spec.seed_base + t,
                successes=list(out.successes),
                excluded=out.excluded,
                reason=out.exclusion_reason,
                faults=len(out.faults),
                digest=out.digest(),
            )
        )
    return BenchReport(spec.to_dict(), list(spec.sequence.prompts), modes, digests)


__all__ = [
    "BenchReport",
    "BenchSpec",
    "DemoSource",
    "SciVLAError",
    "format_rate",
    "generate_demos",
    "load_bench_spec",
    "parse_machine_report",
    "render_report",
    "run_bench",
]
