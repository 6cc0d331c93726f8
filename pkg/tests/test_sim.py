from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scivla.errors import ActionError, ConfigError
from scivla.geometry import Box
from scivla.sim.scenario import load_scenario, parse_predicate
from scivla.sim.state import Action, JointConfiguration, ObservationSummary, WorldState
from scivla.sim.world import evaluate, evaluate_all, init_scene, observe, step

from conftest import SCENARIOS, make_scenario

ZERO6 = (0.0,) * 6


def hold(dof=6):
    return Action((0.0,) * dof, "hold")


# geometry --------------------------------------------------------------------

UNIT = Box("unit", (0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
coord = st.floats(-2.0, 3.0, allow_nan=False)
point = st.tuples(coord, coord, coord)


def test_segment_through_center_hits():
    assert UNIT.segment_hits((-1, 0.5, 0.5), (2, 0.5, 0.5))


def test_segment_grazing_a_face_does_not_hit():
    assert not UNIT.segment_hits((-1, 0.5, 1.0), (2, 0.5, 1.0))


def test_segment_ending_short_of_box_does_not_hit():
    assert not UNIT.segment_hits((-1, 0.5, 0.5), (-0.1, 0.5, 0.5))


@settings(max_examples=300, deadline=None)
@given(point, point)
def test_segment_hits_agrees_with_dense_sampling(a, b):
    # sampled interior point implies a hit; a hit implies some interior point near the sampled set
    ts = np.linspace(0.0, 1.0, 2001)
    pts = np.outer(1 - ts, a) + np.outer(ts, b)
    margin = 1e-9  # clear of float rounding at the faces
    inside = np.all((pts > margin) & (pts < 1.0 - margin), axis=1)
    if inside.any():
        assert UNIT.segment_hits(a, b)
    if UNIT.segment_hits(a, b):
        closed = np.all((pts >= -1e-3) & (pts <= 1.0 + 1e-3), axis=1)
        assert closed.any()


# scenario loading ---------------------------------------------------------------


def test_extends_merges_robot_definition(cleaning):
    assert cleaning.dof == 6
    assert cleaning.max_step_delta == 0.05
    assert "basket" in cleaning.regions


def test_effector_start_is_solved_from_home(cleaning):
    task = cleaning.task("pick PCR plate into the basket")
    assert cleaning.effector_of(task.start.joints) == pytest.approx((-0.10, 0.30, 0.20), abs=1e-12)


def test_rank_deficient_map_rejected():
    bad = {"matrix": [[1, 0, 0]] * 6, "offset": [0, 0, 0]}
    with pytest.raises(ConfigError, match="rank"):
        make_scenario(effector_map=bad)


def test_unknown_predicate_object_rejected(cleaning):
    with pytest.raises(ConfigError):
        parse_predicate({"kind": "object_in_region", "object": "nope", "region": "basket"}, cleaning, "p")


def test_alias_must_point_at_canonical_task(tmp_path):
    doc = (SCENARIOS / "cleaning_table.yaml").read_text()
    doc += "  some alias:\n    same_as: no such task\n    predicate: {kind: effector_in_region, region: basket}\n"
    (tmp_path / "robot.yaml").write_text((SCENARIOS / "robot.yaml").read_text())
    (tmp_path / "s.yaml").write_text(doc)
    with pytest.raises(ConfigError, match="same_as"):
        load_scenario(tmp_path / "s.yaml")


# init_scene -------------------------------------------------------------------


def test_init_scene_deterministic(cleaning):
    assert init_scene(cleaning, 0).serialize() == init_scene(cleaning, 0).serialize()


def test_seeds_give_different_positions_inside_spawn(cleaning):
    a = init_scene(cleaning, 0).objects["pipette_box"].position
    b = init_scene(cleaning, 1).objects["pipette_box"].position
    spawn = cleaning.objects["pipette_box"].spawn
    assert spawn.contains(a) and spawn.contains(b)
    assert a != b


def test_zero_volume_spawn_is_exact():
    s = make_scenario(objects={"cup": {"spawn": {"min": [0.1, 0.5, 0.0], "max": [0.1, 0.5, 0.0]}}})
    assert init_scene(s, 7).objects["cup"].position == (0.1, 0.5, 0.0)


def test_perturbation_bounds_arm(cleaning):
    for seed in range(20):
        st_ = init_scene(cleaning, seed, 0.05)
        assert max(abs(q) for q in st_.arm.joints) <= 0.05
    assert init_scene(cleaning, 3, 0.0).arm.joints == cleaning.home.joints


def test_negative_perturbation_rejected(cleaning):
    with pytest.raises(ConfigError):
        init_scene(cleaning, 0, -0.1)


# step -------------------------------------------------------------------------


def test_identity_action_only_advances_step_count(cleaning):
    s0 = init_scene(cleaning, 0)
    s1 = step(cleaning, s0, hold())
    d0, d1 = s0.to_dict(), s1.to_dict()
    assert d1.pop("step_count") == d0.pop("step_count") + 1
    assert d0 == d1


def test_close_far_from_objects_grasps_nothing(cleaning):
    s = step(cleaning, init_scene(cleaning, 0), Action(ZERO6, "close"))
    assert s.effector.holding is None
    assert s.arm.gripper == 0.0


def test_oversized_increment_rejected(cleaning):
    with pytest.raises(ActionError):
        step(cleaning, init_scene(cleaning, 0), Action((0.06,) + ZERO6[1:], "hold"))


def test_wrong_arity_rejected(cleaning):
    with pytest.raises(ActionError):
        step(cleaning, init_scene(cleaning, 0), Action((0.0,) * 5, "hold"))


def _move_to(scenario, state, goal):
    dq = scenario.joint_delta_for([g - h for g, h in zip(goal, state.effector.position)])
    n = int(np.ceil(max(abs(v) for v in dq) / scenario.max_step_delta)) or 1
    for _ in range(n):
        state = step(scenario, state, Action(tuple(v / n for v in dq), "hold"))
    return state


def test_straight_move_through_box_sets_collision():
    start, goal = (-0.2, 0.5, 0.2), (0.2, 0.5, 0.2)
    mid = tuple((a + b) / 2 for a, b in zip(start, goal))
    box = {"name": "wall", "min": [mid[0] - 0.02, mid[1] - 0.05, 0.0], "max": [mid[0] + 0.02, mid[1] + 0.05, 0.3]}
    s = make_scenario(keep_out=[box])
    state = _move_to(s, init_scene(s, 0, 0.0), start)
    assert state.collision is None
    state = _move_to(s, state, goal)
    assert state.collision is not None and state.collision.box == "wall"


def test_grasp_carry_release(cleaning):
    state = init_scene(cleaning, 4, 0.0)
    box_pos = state.objects["pipette_box"].position
    state = _move_to(cleaning, state, box_pos)
    state = step(cleaning, state, Action(ZERO6, "close"))
    assert state.effector.holding == "pipette_box"
    assert observe(state).holding
    state = _move_to(cleaning, state, (box_pos[0], box_pos[1], 0.3))
    assert state.objects["pipette_box"].position == state.effector.position
    state = _move_to(cleaning, state, (0.2, 0.5, 0.2))
    state = step(cleaning, state, Action(ZERO6, "open"))
    assert state.effector.holding is None
    assert state.objects["pipette_box"].region == "basket"


def test_control_toggles_latch(centrifuge):
    state = init_scene(centrifuge, 0, 0.0)
    control = next(c for c in centrifuge.controls if c.latch == "lid" and c.when == state.latch(c.instrument, "lid"))
    state = _move_to(centrifuge, state, control.position)
    state = step(centrifuge, state, Action(ZERO6, "close"))
    assert state.latch(control.instrument, "lid") == control.set


# predicates and observation -----------------------------------------------------


def test_object_in_region_predicate(cleaning):
    state = init_scene(cleaning, 0)
    pred = parse_predicate({"kind": "object_in_region", "object": "pipette_box", "region": "basket"}, cleaning, "p")
    assert not evaluate(state, pred)
    moved = dict(state.objects)
    moved["pipette_box"] = type(moved["pipette_box"])((0.2, 0.5, 0.1), "basket")
    inside = WorldState(state.arm, state.effector, moved, state.instruments, state.keep_out, state.step_count)
    assert evaluate(inside, pred)


def test_latch_predicate_false_when_other_value(centrifuge):
    state = init_scene(centrifuge, 0)
    inst = {k: dict(v) for k, v in state.instruments.items()}
    inst["centrifuge5910"]["lid"] = "open"
    state = WorldState(state.arm, state.effector, state.objects, inst, state.keep_out)
    pred = parse_predicate(
        {"kind": "latch_equals", "instrument": "centrifuge5910", "latch": "lid", "value": "closed"}, centrifuge, "p"
    )
    assert not evaluate(state, pred)


def test_scripted_oracle_places_all_three_objects(cleaning):
    from scivla.bench import run_script

    state = init_scene(cleaning, 11, 0.0)
    preds = []
    for task in cleaning.canonical_tasks():
        # hand-written hop between tasks: up, over the next object, then its script
        x, y, _ = state.effector.position
        state = _move_to(cleaning, state, (x, y, 0.3))
        obj = task.predicates[0].args["object"]
        ox, oy, _ = state.objects[obj].position
        state = _move_to(cleaning, state, (ox, oy, 0.3))
        state = run_script(cleaning, task, state)[-1]
        preds.extend(task.predicates)
    assert state.collision is None
    assert evaluate_all(state, preds)


def test_observation_echoes_init(cleaning):
    state = init_scene(cleaning, 2)
    obs = observe(state)
    assert obs.joints == state.arm.joints
    assert obs.gripper == state.arm.gripper
    assert not obs.holding
    for k, pose in state.objects.items():
        assert obs.objects[k] == pytest.approx(pose.position, abs=5e-4)


def test_observation_round_trip(centrifuge):
    obs = observe(init_scene(centrifuge, 5))
    assert ObservationSummary.from_dict(obs.to_dict()) == obs


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.lists(st.integers(0, 2), min_size=0, max_size=40))
def test_world_state_serialization_round_trip(seed, cmds):
    scenario = _CLEAN
    rng = np.random.default_rng(seed)
    state = init_scene(scenario, seed)
    for c in cmds:
        delta = tuple(float(v) for v in rng.uniform(-0.05, 0.05, 6))
        state = step(scenario, state, Action(delta, ("hold", "open", "close")[c]))
    back = WorldState.from_dict(state.to_dict())
    assert back.serialize() == state.serialize()


_CLEAN = load_scenario(SCENARIOS / "cleaning_table.yaml")


def test_joint_configuration_distance_is_inf_norm():
    a = JointConfiguration((0.0, 0.1, -0.3), 1.0)
    b = JointConfiguration((0.2, 0.1, 0.0), 0.0)
    assert a.distance(b) == pytest.approx(0.3)
