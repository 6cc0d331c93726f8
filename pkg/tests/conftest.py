from __future__ import annotations

from pathlib import Path

import pytest
import yaml

import scivla
from scivla.bench import demos_for_scenario
from scivla.sim.scenario import load_scenario, scenario_from_dict

FIXTURES = Path(scivla.__file__).parent / "fixtures"
SCENARIOS = FIXTURES / "scenarios"
SEQUENCES = FIXTURES / "sequences"
BENCHES = FIXTURES / "bench"


def robot_doc(**extra) -> dict:
    """Bare robot definition; tests layer scene content on top."""
    doc = yaml.safe_load((SCENARIOS / "robot.yaml").read_text())
    doc.update(extra)
    return doc


def make_scenario(**extra):
    return scenario_from_dict(robot_doc(**extra))


@pytest.fixture(scope="session")
def cleaning():
    return load_scenario(SCENARIOS / "cleaning_table.yaml")


@pytest.fixture(scope="session")
def cleaning_store(cleaning):
    return demos_for_scenario(cleaning, 100, 0)


@pytest.fixture(scope="session")
def centrifuge():
    return load_scenario(SCENARIOS / "centrifuge.yaml")


@pytest.fixture(scope="session")
def thermal():
    return load_scenario(SCENARIOS / "thermal_cycler.yaml")


@pytest.fixture(scope="session")
def mixed_store(centrifuge, thermal):
    return demos_for_scenario(centrifuge, 100, 100) + demos_for_scenario(thermal, 100, 200)
