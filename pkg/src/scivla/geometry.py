"""Axis-aligned boxes and segment tests in the scene frame (meters)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

Vec3 = tuple[float, float, float]


@dataclass(frozen=True)
class Box:
    name: str
    lo: Vec3
    hi: Vec3

    def __post_init__(self) -> None:
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"box {self.name!r} has min above max")

    @property
    def top(self) -> float:
        return self.hi[2]

    @property
    def center(self) -> Vec3:
        return tuple((l + h) / 2.0 for l, h in zip(self.lo, self.hi))  # type: ignore[return-value]

    def contains(self, p: Sequence[float]) -> bool:
        """Closed containment; boundary points count as inside."""
        return all(l <= x <= h for l, x, h in zip(self.lo, p, self.hi))

    def segment_hits(self, a: Sequence[float], b: Sequence[float]) -> bool:
        """True iff the segment a-b passes through the open interior of the box.

        Grazing a face or edge is not a hit, so a path resting on the box top
        is allowed.
        """
        if self._inside(a) or self._inside(b):
            return True
        t0, t1 = 0.0, 1.0
        for lo, hi, pa, pb in zip(self.lo, self.hi, a, b):
            d = pb - pa
            if d == 0.0:
                if not lo < pa < hi:
                    return False
                continue
            ta, tb = (lo - pa) / d, (hi - pa) / d
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
            if t0 >= t1:
                return False
        return True

    def _inside(self, p: Sequence[float]) -> bool:
        return all(l < x < h for l, x, h in zip(self.lo, p, self.hi))

    def to_dict(self) -> dict:
        return {"name": self.name, "min": list(self.lo), "max": list(self.hi)}

    @classmethod
    def from_dict(cls, data: dict, name: str | None = None) -> "Box":
        return cls(name or data["name"], _vec3(data["min"]), _vec3(data["max"]))


def _vec3(v: Sequence[float]) -> Vec3:
    if len(v) != 3:
        raise ValueError(f"expected 3 coordinates, got {len(v)}")
    return (float(v[0]), float(v[1]), float(v[2]))
