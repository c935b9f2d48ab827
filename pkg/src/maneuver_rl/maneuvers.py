"""Discrete lateral x longitudinal maneuver vocabulary."""
from __future__ import annotations

import enum
from typing import NamedTuple


class Lateral(enum.IntEnum):
    HARD_LEFT = 0
    SOFT_LEFT = 1
    SAME_LANE = 2
    SOFT_RIGHT = 3
    HARD_RIGHT = 4

    @property
    def ordinal(self) -> int:
        # hard_left -2 ... hard_right +2
        return int(self) - 2

    @property
    def label(self) -> str:
        return self.name.lower()


class Longitudinal(enum.IntEnum):
    ACCELERATE = 0
    CRUISE = 1
    DECELERATE = 2
    BRAKE = 3

    @property
    def ordinal(self) -> int:
        return _LON_ORDINAL[self]

    @property
    def label(self) -> str:
        return self.name.lower()


_LON_ORDINAL = {
    Longitudinal.ACCELERATE: 1,
    Longitudinal.CRUISE: 0,
    Longitudinal.DECELERATE: -1,
    Longitudinal.BRAKE: -2,
}


class Maneuver(NamedTuple):
    """A (lateral, longitudinal) pair; used both as a label and as an action."""

    lateral: Lateral
    longitudinal: Longitudinal

    @classmethod
    def of(cls, lateral, longitudinal) -> "Maneuver":
        return cls(_coerce(Lateral, lateral), _coerce(Longitudinal, longitudinal))

    @property
    def index(self) -> int:
        """Flat index in [0, 20) for the joint action space."""
        return int(self.lateral) * len(Longitudinal) + int(self.longitudinal)

    @classmethod
    def from_index(cls, index: int) -> "Maneuver":
        lat, lon = divmod(int(index), len(Longitudinal))
        return cls(Lateral(lat), Longitudinal(lon))

    def __str__(self) -> str:
        return f"{self.lateral.label}/{self.longitudinal.label}"


# Both names appear in the domain vocabulary; they are the same structure.
ManeuverLabel = Maneuver
MetaAction = Maneuver

N_LATERAL = len(Lateral)
N_LONGITUDINAL = len(Longitudinal)
N_JOINT = N_LATERAL * N_LONGITUDINAL


def _coerce(enum_cls, value):
    if isinstance(value, enum_cls):
        return value
    if isinstance(value, str):
        return enum_cls[value.upper()]
    return enum_cls(int(value))
