import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maneuver_rl.dynamics import (ControlDelta, ControlTable, EgoState, action_to_control, estimate_state,
                                  step_unicycle)
from maneuver_rl.maneuvers import Lateral, Longitudinal, Maneuver


@pytest.mark.parametrize("action, dv, dphi", [
    (("same_lane", "cruise"), 0.0, 0.0),
    (("soft_left", "accelerate"), 0.5, -0.01),
    (("hard_right", "brake"), -1.5, 0.04),
    (("hard_left", "decelerate"), -0.5, -0.04),
    (("soft_right", "cruise"), 0.0, 0.01),
])
def test_control_table(action, dv, dphi):
    assert action_to_control(action) == ControlDelta(dv, dphi)


def test_control_table_override():
    t = ControlTable.from_mapping({"dv.brake": -3.0, "dphi.hard": 0.08})
    assert action_to_control(Maneuver(Lateral.HARD_LEFT, Longitudinal.BRAKE), t) == ControlDelta(-3.0, -0.08)
    with pytest.raises(KeyError):
        ControlTable.from_mapping({"dv.warp": 1.0})


def test_control_delta_invariants():
    with pytest.raises(ValueError):
        ControlDelta(0.0, 0.2)
    with pytest.raises(ValueError):
        ControlDelta(float("nan"), 0.0)


@pytest.mark.parametrize("prev, cur, v, phi", [
    ((0, 0), (0, 1.5), 15.0, 0.0),
    ((0, 0), (0, 0), 0.0, 0.0),
    ((0, 0), (1.5, 0), 15.0, math.pi / 2),
    ((0, 0), (0, -1.5), 15.0, math.pi),
])
def test_estimate_state(prev, cur, v, phi):
    s = estimate_state(prev, cur, 0.1)
    assert s.v == pytest.approx(v) and s.phi == pytest.approx(phi)
    assert (s.x, s.y) == cur


def test_nonpositive_dt():
    with pytest.raises(ValueError):
        estimate_state((0, 0), (1, 1), 0.0)
    with pytest.raises(ValueError):
        step_unicycle(EgoState(0, 0, 1, 0), ControlDelta(0, 0), -0.1)


def test_step_examples():
    s = step_unicycle(EgoState(0, 0, 15, 0), ControlDelta(0, 0), 0.1)
    assert (s.x, s.y, s.v, s.phi) == (0.0, pytest.approx(1.5), 15.0, 0.0)
    s = step_unicycle(EgoState(0, 0, 15, 0), ControlDelta(0.5, 0.01), 0.1)
    assert s.x == pytest.approx(0.015500, abs=1e-6)
    assert s.y == pytest.approx(1.549923, abs=1e-6)
    s = step_unicycle(EgoState(3, 4, 1, 0.3), ControlDelta(-1.5, 0), 0.1)
    assert (s.x, s.y, s.v) == (3, 4, 0.0)


def test_straight_line_closed_form():
    s = EgoState(5.0, -2.0, 40.0, 0.2)
    for n in range(1, 201):
        prev = s
        s = step_unicycle(s, ControlDelta(0, 0), 0.1)
        assert math.hypot(s.x - prev.x, s.y - prev.y) == pytest.approx(4.0, rel=1e-12)
        assert s.phi == 0.2 and s.v == 40.0
    assert s.x == pytest.approx(5.0 + 200 * 4.0 * math.sin(0.2))
    assert s.y == pytest.approx(-2.0 + 200 * 4.0 * math.cos(0.2))


def test_constant_turn_traces_circle():
    v, dphi, dt, n = 30.0, 0.01, 0.1, 100
    s = EgoState(0.0, 0.0, v, 0.0)
    pts = [(0.0, 0.0)]
    for k in range(1, n + 1):
        s = step_unicycle(s, ControlDelta(0.0, dphi), dt)
        assert s.phi == pytest.approx(k * dphi, abs=1e-15)
        pts.append((s.x, s.y))
    radius = v * dt / dphi
    # fit the circle through the discrete points: centre lies on +x for a right turn
    pts = np.array(pts)
    A = np.column_stack([2 * pts, np.ones(len(pts))])
    b = (pts ** 2).sum(1)
    cx, cy, c = np.linalg.lstsq(A, b, rcond=None)[0]
    r_fit = math.sqrt(c + cx ** 2 + cy ** 2)
    assert r_fit == pytest.approx(radius, rel=0.01)
    assert np.allclose(np.hypot(pts[:, 0] - cx, pts[:, 1] - cy), r_fit, rtol=1e-6)


@given(st.floats(0, 100), st.lists(st.tuples(st.integers(0, 4), st.integers(0, 3)), max_size=80))
def test_speed_never_negative(v0, actions):
    s = EgoState(0.0, 0.0, v0, 0.0)
    for lat, lon in actions:
        s = step_unicycle(s, action_to_control((lat, lon)), 0.1)
        assert s.v >= 0.0


def test_maneuver_codes():
    assert Lateral.HARD_LEFT.ordinal == -2 and Lateral.HARD_RIGHT.ordinal == 2
    assert [m.ordinal for m in Longitudinal] == [1, 0, -1, -2]
    for i in range(20):
        assert Maneuver.from_index(i).index == i
    assert Maneuver.of("soft_left", 3) == Maneuver(Lateral.SOFT_LEFT, Longitudinal.BRAKE)
    assert str(Maneuver.of(2, 1)) == "same_lane/cruise"
    with pytest.raises(KeyError):
        Maneuver.of("sideways", "cruise")
