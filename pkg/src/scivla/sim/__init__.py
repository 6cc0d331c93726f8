"""Deterministic kinematic lab simulator."""

from scivla.sim.scenario import (
    Control,
    ScenarioSpec,
    SuccessPredicate,
    TaskSpec,
    load_scenario,
    scenario_from_dict,
)
from scivla.sim.state import (
    Action,
    CollisionFault,
    EffectorState,
    JointConfiguration,
    ObjectPose,
    ObservationSummary,
    WorldState,
)
from scivla.sim.world import apply_setup, evaluate, evaluate_all, init_scene, make_rng, observe, step

__all__ = [
    "Action",
    "CollisionFault",
    "Control",
    "EffectorState",
    "JointConfiguration",
    "ObjectPose",
    "ObservationSummary",
    "ScenarioSpec",
    "SuccessPredicate",
    "TaskSpec",
    "WorldState",
    "apply_setup",
    "evaluate",
    "evaluate_all",
    "init_scene",
    "load_scenario",
    "make_rng",
    "observe",
    "scenario_from_dict",
    "step",
]
