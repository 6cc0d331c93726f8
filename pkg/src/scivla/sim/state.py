"""Value types for the kinematic lab simulator.

All types are immutable; the simulator returns new states rather than
mutating old ones, so a state can be handed between threads freely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from scivla.geometry import Box, Vec3

GRIPPER_COMMANDS = ("open", "close", "hold")


@dataclass(frozen=True)
class JointConfiguration:
    """Arm joint angles (radians) plus gripper aperture (0 closed, 1 open)."""

    joints: tuple[float, ...]
    gripper: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "joints", tuple(float(q) for q in self.joints))
        object.__setattr__(self, "gripper", float(self.gripper))
        if not 0.0 <= self.gripper <= 1.0:
            raise ValueError(f"gripper aperture {self.gripper} outside [0, 1]")

    @property
    def dof(self) -> int:
        return len(self.joints)

    def distance(self, other: "JointConfiguration") -> float:
        """Infinity-norm distance over the arm joints (gripper ignored)."""
        return max((abs(a - b) for a, b in zip(self.joints, other.joints)), default=0.0)

    def to_list(self) -> list[float]:
        return [*self.joints, self.gripper]

    @classmethod
    def from_list(cls, values: list[float]) -> "JointConfiguration":
        if len(values) < 2:
            raise ValueError("a configuration needs at least one joint and a gripper value")
        return cls(tuple(values[:-1]), values[-1])


@dataclass(frozen=True)
class Action:
    joint_delta: tuple[float, ...]
    gripper_command: str = "hold"

    def __post_init__(self) -> None:
        object.__setattr__(self, "joint_delta", tuple(float(d) for d in self.joint_delta))
        if self.gripper_command not in GRIPPER_COMMANDS:
            raise ValueError(f"unknown gripper command {self.gripper_command!r}")

    def to_dict(self) -> dict:
        return {"joint_delta": list(self.joint_delta), "gripper": self.gripper_command}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Action":
        return cls(tuple(data["joint_delta"]), data["gripper"])


@dataclass(frozen=True)
class EffectorState:
    position: Vec3
    holding: str | None = None


@dataclass(frozen=True)
class ObjectPose:
    position: Vec3
    region: str | None = None


@dataclass(frozen=True)
class CollisionFault:
    step: int
    box: str

    def to_dict(self) -> dict:
        return {"step": self.step, "box": self.box}


@dataclass(frozen=True)
class WorldState:
    arm: JointConfiguration
    effector: EffectorState
    objects: Mapping[str, ObjectPose]
    instruments: Mapping[str, Mapping[str, str]]
    keep_out: tuple[Box, ...] = ()
    step_count: int = 0
    collision: CollisionFault | None = None

    def latch(self, instrument: str, latch: str) -> str:
        return self.instruments[instrument][latch]

    def to_dict(self) -> dict:
        return {
            "arm": self.arm.to_list(),
            "effector": {"position": list(self.effector.position), "holding": self.effector.holding},
            "objects": {
                k: {"position": list(v.position), "region": v.region} for k, v in sorted(self.objects.items())
            },
            "instruments": {k: dict(sorted(v.items())) for k, v in sorted(self.instruments.items())},
            "keep_out": [b.to_dict() for b in self.keep_out],
            "step_count": self.step_count,
            "collision": self.collision.to_dict() if self.collision else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "WorldState":
        eff = data["effector"]
        col = data.get("collision")
        return cls(
            arm=JointConfiguration.from_list(data["arm"]),
            effector=EffectorState(tuple(eff["position"]), eff["holding"]),
            objects={
                k: ObjectPose(tuple(v["position"]), v["region"]) for k, v in data["objects"].items()
            },
            instruments={k: dict(v) for k, v in data["instruments"].items()},
            keep_out=tuple(Box.from_dict(b) for b in data["keep_out"]),
            step_count=int(data["step_count"]),
            collision=CollisionFault(col["step"], col["box"]) if col else None,
        )

    def serialize(self) -> str:
        """Canonical JSON text; floats use repr so the encoding is bit-exact."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class ObservationSummary:
    """What the policy and agent get to see in place of a camera frame."""

    joints: tuple[float, ...]
    gripper: float
    effector: Vec3
    holding: bool
    latches: Mapping[str, Mapping[str, str]] = field(default_factory=dict)
    objects: Mapping[str, Vec3] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "joints": list(self.joints),
            "gripper": self.gripper,
            "effector": list(self.effector),
            "holding": self.holding,
            "latches": {k: dict(sorted(v.items())) for k, v in sorted(self.latches.items())},
            "objects": {k: list(v) for k, v in sorted(self.objects.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ObservationSummary":
        return cls(
            joints=tuple(data["joints"]),
            gripper=data["gripper"],
            effector=tuple(data["effector"]),
            holding=data["holding"],
            latches={k: dict(v) for k, v in data["latches"].items()},
            objects={k: tuple(v) for k, v in data["objects"].items()},
        )
