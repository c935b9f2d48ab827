"""Meta-action to control mapping and the ego unicycle model."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .maneuvers import Lateral, Longitudinal, MetaAction
from .trajectory import DT

MAX_DPHI = 0.1


@dataclass(frozen=True)
class ControlDelta:
    dv: float  # ft/s per step
    dphi: float  # rad per step

    def __post_init__(self):
        if not (math.isfinite(self.dv) and math.isfinite(self.dphi)):
            raise ValueError("control delta must be finite")
        if abs(self.dphi) > MAX_DPHI:
            raise ValueError(f"|dphi| must not exceed {MAX_DPHI} rad")


@dataclass(frozen=True)
class EgoState:
    x: float
    y: float
    v: float
    phi: float  # 0 = straight along +y, positive turns toward +x (right)


@dataclass(frozen=True)
class ControlTable:
    """Fixed velocity / yaw change per discrete action. Left is negative yaw."""

    dv_accelerate: float = 0.5
    dv_cruise: float = 0.0
    dv_decelerate: float = -0.5
    dv_brake: float = -1.5
    dphi_hard: float = 0.04
    dphi_soft: float = 0.01

    @classmethod
    def from_mapping(cls, values: dict) -> "ControlTable":
        """Build from dotted keys such as ``dv.accelerate`` or ``dphi.hard``."""
        kwargs = {}
        for key, value in values.items():
            name = key.replace(".", "_")
            if name not in cls.__dataclass_fields__:
                raise KeyError(key)
            kwargs[name] = float(value)
        return replace(cls(), **kwargs)

    def dv(self, lon: Longitudinal) -> float:
        return {Longitudinal.ACCELERATE: self.dv_accelerate, Longitudinal.CRUISE: self.dv_cruise,
                Longitudinal.DECELERATE: self.dv_decelerate, Longitudinal.BRAKE: self.dv_brake}[lon]

    def dphi(self, lat: Lateral) -> float:
        return {Lateral.HARD_LEFT: -self.dphi_hard, Lateral.SOFT_LEFT: -self.dphi_soft,
                Lateral.SAME_LANE: 0.0, Lateral.SOFT_RIGHT: self.dphi_soft,
                Lateral.HARD_RIGHT: self.dphi_hard}[lat]


DEFAULT_CONTROLS = ControlTable()


def action_to_control(action: MetaAction, table: ControlTable = DEFAULT_CONTROLS) -> ControlDelta:
    action = MetaAction.of(*action)
    return ControlDelta(table.dv(action.longitudinal), table.dphi(action.lateral))


def estimate_state(prev: tuple[float, float], cur: tuple[float, float], dt: float = DT) -> EgoState:
    """Speed and heading from two consecutive positions.

    ``atan2`` is used for the heading so a zero or negative longitudinal
    difference is still well defined; a stationary vehicle gets heading 0.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    dx, dy = cur[0] - prev[0], cur[1] - prev[1]
    vx, vy = dx / dt, dy / dt
    v = math.hypot(vx, vy)
    phi = math.atan2(dx, dy) if (dx or dy) else 0.0
    return EgoState(float(cur[0]), float(cur[1]), v, phi)


def step_unicycle(state: EgoState, u: ControlDelta, dt: float = DT) -> EgoState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    v_up = max(0.0, state.v + u.dv)
    phi_up = state.phi + u.dphi
    return EgoState(state.x + v_up * math.sin(phi_up) * dt,
                    state.y + v_up * math.cos(phi_up) * dt,
                    v_up, phi_up)
