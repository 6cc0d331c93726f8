from __future__ import annotations

import json

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scivla.agent import (
    AgentConfig,
    TransitionContext,
    build_prompt,
    parse_reply,
    rule_based_program,
    synthesize,
)
from scivla.client import ChatClient, RemoteSettings
from scivla.dsl import (
    NO_RECOVERY,
    PATH_COLLISION,
    RELEASE_FIRST,
    RETREAT_FIRST,
    STEP_LIMIT,
    TOO_LONG,
    LiftToSafe,
    RecoverJoints,
    ReleaseGripper,
    TransitionProgram,
    Translate,
    format_program,
    interpret,
    parse,
    validate,
)
from scivla.errors import ConfigError, ParseError, ReplyFormatError, SynthesisFailed, TransportError
from scivla.sim.state import Action, JointConfiguration
from scivla.sim.world import apply_setup, init_scene, make_rng, observe, step
from scivla.trace import TRANSITION

from conftest import make_scenario

ZERO6 = (0.0,) * 6
WALL = {"name": "wall", "min": [-0.03, 0.40, 0.0], "max": [0.03, 0.60, 0.30]}


def config_at(scenario, xyz, gripper=1.0):
    here = scenario.effector_of(scenario.home.joints)
    dq = scenario.joint_delta_for([t - h for t, h in zip(xyz, here)])
    return JointConfiguration(tuple(q + d for q, d in zip(scenario.home.joints, dq)), gripper)


def place_arm(scenario, xyz, seed=0):
    state = init_scene(scenario, seed, 0.0)
    return apply_setup(scenario, state, {}, make_rng(seed), arm=config_at(scenario, xyz))


@pytest.fixture(scope="module")
def walled():
    return make_scenario(
        keep_out=[WALL],
        objects={"cup": {"spawn": {"min": [-0.2, 0.5, 0.1], "max": [-0.2, 0.5, 0.1]}}},
    )


@pytest.fixture()
def holding_state(walled):
    state = place_arm(walled, (-0.2, 0.5, 0.1))
    state = step(walled, state, Action(ZERO6, "close"))
    assert state.effector.holding == "cup"
    return state


def target_beyond_wall(walled, z=0.1):
    return config_at(walled, (0.2, 0.5, z))


# parser -------------------------------------------------------------------------


def test_minimal_program():
    prog = parse("release_gripper\nrecover_joints target=[0,0,0,0,0,0,1.0] steps=50")
    assert len(prog) == 2
    assert prog.commands[1] == RecoverJoints(JointConfiguration(ZERO6, 1.0), 50)


def test_unknown_axis_rejected_at_line_one():
    with pytest.raises(ParseError, match="unknown axis") as err:
        parse("translate axis=w delta=0.1")
    assert err.value.line == 1
    assert err.value.column == 16


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("wave_hand", "unknown command"),
        ("translate axis=x", "arity mismatch"),
        ("lift_to_safe height=0.3 height=0.4", "duplicate"),
        ("translate axis=x delta=1.5", "out of range"),
        ("recover_joints target=[0,0,1] steps=0", "out of range"),
        ("recover_joints target=[0,0,1.5] steps=3", "gripper"),
        ("lift_to_safe height=abc", "decimal"),
        ("# only a comment\n", "empty"),
        ("release_gripper now", "unexpected"),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(ParseError, match=fragment):
        parse(text)


def test_error_reports_line_number():
    with pytest.raises(ParseError) as err:
        parse("release_gripper\n\nlift_to_safe\n")
    assert err.value.line == 3


def test_comments_and_case_are_ignored():
    prog = parse("RELEASE_GRIPPER  # drop it\nLift_To_Safe HEIGHT=0.3")
    assert prog.commands == (ReleaseGripper(), LiftToSafe(0.3))


finite = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False)
command = st.one_of(
    st.just(ReleaseGripper()),
    st.builds(Translate, st.sampled_from(["x", "y", "z"]), finite),
    st.builds(LiftToSafe, st.floats(0.0, 1.0, allow_nan=False)),
    st.builds(
        RecoverJoints,
        st.builds(
            JointConfiguration,
            st.lists(st.floats(-2.0, 2.0, allow_nan=False), min_size=1, max_size=8).map(tuple),
            st.floats(0.0, 1.0, allow_nan=False),
        ),
        st.integers(1, 1000),
    ),
)
programs = st.lists(command, min_size=1, max_size=12).map(lambda cs: TransitionProgram(tuple(cs)))


@settings(max_examples=1000, deadline=None)
@given(programs)
def test_print_parse_round_trip(program):
    assert parse(format_program(program)) == program
    assert parse(str(program)) == program


# validator ------------------------------------------------------------------------


def rules(violations):
    return {v.rule for v in violations}


def test_recover_while_holding_violates_release_first(walled, holding_state):
    prog = TransitionProgram((LiftToSafe(0.4), RecoverJoints(target_beyond_wall(walled), 100)))
    assert RELEASE_FIRST in rules(validate(prog, holding_state, walled))


def test_release_lift_recover_over_wall_is_ok(walled, holding_state):
    # the wall is 0.3 m tall; the straight path from 0.4 m down to 0.35 m stays above it
    target = target_beyond_wall(walled, 0.35)
    direct = TransitionProgram((ReleaseGripper(), RecoverJoints(target, 100)))
    assert RETREAT_FIRST in rules(validate(direct, holding_state, walled))
    prog = TransitionProgram((ReleaseGripper(), LiftToSafe(0.4), RecoverJoints(target, 100)))
    assert validate(prog, holding_state, walled) == []


def test_lifting_then_cutting_the_corner_is_rejected(walled, holding_state):
    prog = TransitionProgram((ReleaseGripper(), LiftToSafe(0.4), RecoverJoints(target_beyond_wall(walled), 100)))
    assert rules(validate(prog, holding_state, walled)) == {PATH_COLLISION}


def test_recover_through_wall_violates_retreat_first(walled):
    state = place_arm(walled, (-0.2, 0.5, 0.1))
    prog = TransitionProgram((RecoverJoints(target_beyond_wall(walled), 100),))
    assert RETREAT_FIRST in rules(validate(prog, state, walled))


def test_lift_then_recover_shape_is_ok(walled):
    # the canonical generated shape: clear the obstacle, then restore joints
    state = place_arm(walled, (-0.2, 0.5, 0.1))
    prog = TransitionProgram((LiftToSafe(0.35), RecoverJoints(target_beyond_wall(walled, 0.32), 100)))
    assert validate(prog, state, walled) == []


def test_release_only_violates_no_recovery(walled, holding_state):
    assert rules(validate(TransitionProgram((ReleaseGripper(),)), holding_state, walled)) == {NO_RECOVERY}


def test_too_many_commands(walled):
    state = place_arm(walled, (-0.2, 0.5, 0.1))
    cmds = (Translate("z", 0.0),) * 16 + (RecoverJoints(state.arm, 5),)
    assert TOO_LONG in rules(validate(TransitionProgram(cmds), state, walled))


def test_too_few_steps_violates_step_limit(walled):
    state = place_arm(walled, (-0.2, 0.5, 0.3))
    target = config_at(walled, (0.2, 0.5, 0.35))
    prog = TransitionProgram((RecoverJoints(target, 1),))
    assert STEP_LIMIT in rules(validate(prog, state, walled))


# interpreter ----------------------------------------------------------------------


def test_recover_to_current_configuration_is_fixed_point(walled):
    state = place_arm(walled, (-0.2, 0.5, 0.2))
    result = interpret(TransitionProgram((RecoverJoints(state.arm, 7),)), state, walled)
    assert result.ok
    assert len(result.trace) == 7
    assert all(e.provenance == TRANSITION for e in result.trace)
    before, after = state.to_dict(), result.state.to_dict()
    assert after.pop("step_count") == before.pop("step_count") + 7
    assert before == after


def test_interpreter_reaches_target_exactly(walled, holding_state):
    target = target_beyond_wall(walled, 0.35)
    prog = TransitionProgram((ReleaseGripper(), LiftToSafe(0.4), RecoverJoints(target, 100)))
    result = interpret(prog, holding_state, walled)
    assert result.ok
    assert result.state.arm.joints == pytest.approx(target.joints, abs=1e-9)
    assert result.state.effector.holding is None
    assert result.state.collision is None


def test_interpreter_flags_gripper_conflict(walled, holding_state):
    result = interpret(TransitionProgram((RecoverJoints(holding_state.arm, 3),)), holding_state, walled)
    assert [f.kind for f in result.faults] == ["gripper_conflict"]


def test_interpreter_flags_collision(walled):
    state = place_arm(walled, (-0.2, 0.5, 0.1))
    result = interpret(TransitionProgram((RecoverJoints(target_beyond_wall(walled), 100),)), state, walled)
    assert "collision" in [f.kind for f in result.faults]


# prompt and reply -----------------------------------------------------------------


def _ctx(scenario, state, target):
    return TransitionContext(
        next_prompt="pick the cup",
        observation=observe(state),
        curr_qpos=state.arm,
        target_qpos=target,
        scene_axis_hints=scenario.axis_hints,
        safe_height=scenario.safe_height(),
    )


def test_prompt_is_deterministic_and_complete(walled, holding_state):
    target = target_beyond_wall(walled)
    a = build_prompt(_ctx(walled, holding_state, target))
    b = build_prompt(_ctx(walled, holding_state, target))
    assert a == b
    for v in target.to_list():
        assert repr(float(v)) in a
    assert "avoiding collisions" in a


def test_reply_with_one_block():
    prog = parse_reply("Here you go:\n```\nrelease_gripper\nrecover_joints target=[0,0,1] steps=5\n```\n")
    assert len(prog) == 2


def test_prose_only_reply_rejected():
    with pytest.raises(ReplyFormatError):
        parse_reply("Just release the gripper and move back.")


def test_two_block_reply_lists_spans():
    text = "```\nrelease_gripper\n```\nand\n```dsl\nlift_to_safe height=0.3\n```\n"
    with pytest.raises(ReplyFormatError) as err:
        parse_reply(text)
    assert len(err.value.spans) == 2
    assert err.value.spans[0][0] == 0 and err.value.spans[1][0] == text.index("```dsl")


# rule-based synthesis ---------------------------------------------------------------


def test_holding_clear_path_gives_release_lift_recover(walled, holding_state):
    target = config_at(walled, (-0.25, 0.5, 0.15))
    prog = rule_based_program(_ctx(walled, holding_state, target), holding_state, walled, AgentConfig())
    assert [type(c) for c in prog.commands] == [ReleaseGripper, LiftToSafe, RecoverJoints]


def test_free_clear_path_gives_recover_only(walled):
    state = place_arm(walled, (-0.2, 0.5, 0.1))
    target = config_at(walled, (-0.25, 0.5, 0.15))
    prog = rule_based_program(_ctx(walled, state, target), state, walled, AgentConfig())
    assert [type(c) for c in prog.commands] == [RecoverJoints]


def test_blocked_path_lifts_first(walled):
    state = place_arm(walled, (-0.2, 0.5, 0.1))
    target = target_beyond_wall(walled)
    result = synthesize(_ctx(walled, state, target), state, walled, AgentConfig())
    assert isinstance(result.program.commands[0], LiftToSafe)
    assert interpret(result.program, state, walled).ok


# remote backend ---------------------------------------------------------------------


def _fake_endpoint(replies, seen):
    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        seen.append((request.headers.get("authorization"), body))
        content = replies[min(len(seen) - 1, len(replies) - 1)]
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}]})

    return httpx.MockTransport(handler)


def test_remote_retries_after_violation(walled, holding_state):
    target = target_beyond_wall(walled, 0.35)
    bad = f"```\nlift_to_safe height=0.4\n{RecoverJoints(target, 100)}\n```"
    good = f"```\nrelease_gripper\nlift_to_safe height=0.4\n{RecoverJoints(target, 100)}\n```"
    seen = []
    client = ChatClient(RemoteSettings(), api_key="k", transport=_fake_endpoint([bad, good], seen))
    result = synthesize(_ctx(walled, holding_state, target), holding_state, walled, AgentConfig(backend="remote"), client)
    assert len(result.attempts) == 2
    assert RELEASE_FIRST in result.attempts[0].problems[0]
    assert result.attempts[1].problems == []
    assert seen[0][0] == "Bearer k"
    assert seen[0][1]["temperature"] == 0.0
    assert "rejected" in seen[1][1]["messages"][-1]["content"]


def test_remote_gives_up_after_retries(walled, holding_state):
    seen = []
    client = ChatClient(RemoteSettings(), api_key="k", transport=_fake_endpoint(["no code here"], seen))
    with pytest.raises(SynthesisFailed) as err:
        synthesize(
            _ctx(walled, holding_state, holding_state.arm),
            holding_state,
            walled,
            AgentConfig(backend="remote", max_retries=2),
            client,
        )
    assert len(err.value.attempts) == 3


def test_transport_failure_is_distinct():
    def boom(request):
        return httpx.Response(500, json={})

    client = ChatClient(RemoteSettings(), api_key="k", transport=httpx.MockTransport(boom))
    with pytest.raises(TransportError):
        client.complete([{"role": "user", "content": "hi"}])


def test_missing_api_key(monkeypatch):
    monkeypatch.delenv("SCIVLA_API_KEY", raising=False)
    with pytest.raises(ConfigError):
        ChatClient(RemoteSettings())


def test_agent_config_bounds():
    with pytest.raises(ConfigError):
        AgentConfig(max_retries=11)
    assert AgentConfig.from_dict(AgentConfig().to_dict()) == AgentConfig()


def test_grasp_inside_program_counts_as_holding(walled):
    state = place_arm(walled, (-0.2, 0.45, 0.1))
    cup = config_at(walled, (-0.2, 0.5, 0.1))
    grab = RecoverJoints(JointConfiguration(cup.joints, 0.0), 10)
    prog = TransitionProgram((grab, RecoverJoints(config_at(walled, (-0.25, 0.5, 0.2)), 60)))
    assert RELEASE_FIRST in rules(validate(prog, state, walled))
    fixed = TransitionProgram((grab, ReleaseGripper(), RecoverJoints(config_at(walled, (-0.25, 0.5, 0.2)), 60)))
    assert validate(fixed, state, walled) == []
    assert interpret(fixed, state, walled).ok


goal = st.tuples(st.floats(-0.3, 0.3), st.floats(0.35, 0.65), st.floats(0.05, 0.45))
near_cup = st.tuples(st.floats(-0.22, -0.18), st.floats(0.48, 0.52), st.floats(0.08, 0.12))
random_cmd = st.one_of(
    st.just(ReleaseGripper()),
    st.builds(Translate, st.sampled_from(["x", "y", "z"]), st.floats(-0.2, 0.2)),
    st.builds(LiftToSafe, st.floats(0.05, 0.55)),
    st.tuples(st.one_of(goal, near_cup), st.sampled_from([0.0, 1.0]), st.integers(1, 120)),
)


@settings(max_examples=300, deadline=None)
@given(st.booleans(), st.lists(random_cmd, min_size=1, max_size=6))
def test_accepted_programs_never_fault(walled, holding, raw):
    state = place_arm(walled, (-0.2, 0.5, 0.1))
    if holding:
        state = step(walled, state, Action(ZERO6, "close"))
    cmds = []
    for c in raw:
        if isinstance(c, tuple):
            xyz, grip, steps = c
            cmds.append(RecoverJoints(JointConfiguration(config_at(walled, xyz).joints, grip), steps))
        else:
            cmds.append(c)
    program = TransitionProgram(tuple(cmds))
    if validate(program, state, walled):
        return
    result = interpret(program, state, walled)
    assert result.faults == []
