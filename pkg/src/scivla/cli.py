"""Command-line entry point: ``scivla bench|run|gen-demos|lint|replay``.

Exit codes: 0 success, 2 configuration error, 3 runtime fault.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import sys
from pathlib import Path

import click

from scivla.bench import (
    BenchContext,
    BenchSpec,
    DemoSource,
    generate_demos,
    load_bench_spec,
    render_report,
    run_bench,
    run_trial,
)
from scivla.demos import DemoStore, save_store
from scivla.dsl import parse, validate
from scivla.errors import ConfigError, SciVLAError
from scivla.orchestrator import MODES, load_sequence, replay_trace
from scivla.sim.scenario import load_scenario
from scivla.sim.state import WorldState
from scivla.sim.world import init_scene

EXIT_CONFIG = 2
EXIT_FAULT = 3

FIXTURES = Path(__file__).parent / "fixtures"


def _guard(fn):
    """Map package errors to exit codes instead of tracebacks."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"configuration error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except SciVLAError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_FAULT)

    return wrapper


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose: int) -> None:
    """Long-horizon task chaining with transition synthesis on a kinematic desk simulator."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(dir_okay=False), help="Bench spec YAML.")
@click.option("--mode", type=click.Choice(["baseline", "sci", "both"]), default=None)
@click.option("--trials", type=int, default=None)
@click.option("--seed", type=int, default=None, help="Seed base; trial t uses seed+t.")
@click.option("--workers", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--format", "fmt", type=click.Choice(["table", "machine"]), default="table")
@_guard
def bench(spec_path, mode, trials, seed, workers, out, fmt) -> None:
    """Run seeded trials and print per-task success rates."""
    spec = load_bench_spec(spec_path)
    changes = {}
    if mode is not None:
        changes["modes"] = MODES if mode == "both" else (mode,)
    if trials is not None:
        changes["trials"] = trials
    if seed is not None:
        changes["seed_base"] = seed
    if changes:
        spec = dataclasses.replace(spec, **changes)
    report = run_bench(spec, workers)
    _write(render_report(report, fmt), out)


@main.command("run")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(dir_okay=False))
@click.option("--sequence", "sequence_path", required=True, type=click.Path(dir_okay=False))
@click.option("--mode", type=click.Choice(list(MODES)), default="sci", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--demos", "demos_path", type=click.Path(dir_okay=False), default=None, help="JSONL demo file; generated from the scenario if omitted.")
@click.option("--demo-count", type=int, default=100, show_default=True)
@click.option("--demo-seed", type=int, default=0, show_default=True)
@click.option("--perturbation", type=float, default=0.05, show_default=True)
@click.option("--trace-out", type=click.Path(dir_okay=False), default=None, help="Write a replayable trace document.")
@_guard
def run_cmd(scenario_path, sequence_path, mode, seed, demos_path, demo_count, demo_seed, perturbation, trace_out) -> None:
    """Execute one task sequence once and print the outcome as JSON."""
    scenario = load_scenario(scenario_path)
    source = DemoSource(path=demos_path) if demos_path else DemoSource(scenario_path, count=demo_count, seed=demo_seed)
    spec = BenchSpec(
        scenario=scenario_path,
        sequence=load_sequence(sequence_path),
        trials=1,
        perturbation=perturbation,
        modes=(mode,),
        seed_base=seed,
        demos=(source,),
    )
    store = source.load()
    outcome = run_trial(BenchContext(spec, scenario, store), mode, 0)
    if trace_out:
        doc = outcome.trace_document(scenario, seed, perturbation)
        Path(trace_out).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
    summary = {
        "mode": mode,
        "seed": seed,
        "prompts": list(spec.sequence.prompts),
        "successes": outcome.successes,
        "policy_modes": outcome.modes,
        "steps": len(outcome.trace),
        "faults": outcome.faults,
        "transitions": [t.to_dict() for t in outcome.transitions],
        "excluded": outcome.excluded,
        "exclusion_reason": outcome.exclusion_reason,
        "digest": outcome.digest(),
    }
    click.echo(json.dumps(summary, indent=2))
    if outcome.excluded:
        sys.exit(EXIT_FAULT)


@main.command("gen-demos")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(dir_okay=False))
@click.option("--task", "prompt", required=True, help="Atomic task prompt.")
@click.option("--count", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_guard
def gen_demos(scenario_path, prompt, count, seed, out) -> None:
    """Generate scripted demonstrations for one task into a JSONL file."""
    if count < 0:
        raise ConfigError("must be >= 0", "count")
    scenario = load_scenario(scenario_path)
    demos = generate_demos(scenario, prompt, count, seed)
    save_store(DemoStore(demos), out)
    click.echo(f"wrote {len(demos)} demonstrations to {out}")


@main.command()
@click.argument("dsl_file", type=click.Path(dir_okay=False))
@click.option("--scenario", "scenario_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True, help="Scene seed used when no --state is given.")
@click.option("--state", "state_path", type=click.Path(dir_okay=False), default=None, help="WorldState JSON to check against.")
@click.option("--max-commands", type=int, default=16, show_default=True)
@_guard
def lint(dsl_file, scenario_path, seed, state_path, max_commands) -> None:
    """Parse and safety-check a transition program."""
    scenario = load_scenario(scenario_path)
    if state_path:
        try:
            state = WorldState.from_dict(json.loads(Path(state_path).read_text(encoding="utf-8")))
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read state: {exc}", "state") from None
    else:
        state = init_scene(scenario, seed)
    try:
        source = Path(dsl_file).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(exc), "dsl_file") from None
    program = parse(source)
    violations = validate(program, state, scenario, max_commands)
    for v in violations:
        click.echo(f"{dsl_file}: {v}")
    if violations:
        sys.exit(EXIT_FAULT)
    click.echo(f"{dsl_file}: ok ({len(program)} commands)")


@main.command()
@click.option("--trace", "trace_path", required=True, type=click.Path(dir_okay=False))
@click.option("--scenario", "scenario_path", required=True, type=click.Path(dir_okay=False))
@_guard
def replay(trace_path, scenario_path) -> None:
    """Re-execute a recorded trace and compare the final world state."""
    scenario = load_scenario(scenario_path)
    try:
        doc = json.loads(Path(trace_path).read_text(encoding="utf-8"))
        recorded = WorldState.from_dict(doc["final_state"])
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read trace: {exc}", "trace") from None
    if doc.get("scenario") not in (None, scenario.name):
        raise ConfigError(f"trace was recorded on {doc['scenario']!r}, not {scenario.name!r}", "scenario")
    final = replay_trace(scenario, doc)
    if final.serialize() != recorded.serialize():
        click.echo("mismatch: replayed final state differs from the recorded one", err=True)
        sys.exit(EXIT_FAULT)
    click.echo(f"match: {len(doc['entries'])} steps reproduce the recorded final state")


@main.command()
def fixtures() -> None:
    """List the bundled scenario, sequence and bench files."""
    for path in sorted(FIXTURES.rglob("*.yaml")):
        click.echo(str(path))


if __name__ == "__main__":  # pragma: no cover
    main()
