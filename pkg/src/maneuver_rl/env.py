"""Trajectory-replay driving environment and the rule-based baseline policy.

One episode controls one recorded vehicle (the ego); every other vehicle is
replayed from the dataset and never reacts to the ego.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DEFAULT_CONTROLS, ControlTable, EgoState, action_to_control, estimate_state, step_unicycle
from .grid import DEFAULT_SPEC, GridSpec, build_grid
from .maneuvers import Lateral, Longitudinal, Maneuver, MetaAction
from .mnn import predict_many
from .reward import RewardBreakdown, RewardConfig, in_negative_region, total_reward
from .trajectory import (DT, SENSOR_RANGE, SPEED_WINDOW, BoundaryError, FrameIndex,
                         label_lateral, label_longitudinal, nearby)


class EpisodeError(ValueError):
    pass


class ProtocolError(RuntimeError):
    pass


@dataclass
class StepResult:
    observation: np.ndarray
    reward: RewardBreakdown
    done: bool
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Scene:
    """What the rule policy sees: ego kinematics plus surrounding (y, lane) pairs."""

    ego_y: float
    ego_v: float
    ego_lane: int
    others: tuple[tuple[float, int], ...] = ()


@dataclass(frozen=True)
class RuleConfig:
    d1: float = 16.0
    d2: float = 25.0
    l: float = 15.0
    speed_p75: float = math.inf  # ft/s; accelerate only below this speed
    n_lanes: int = 5


def _front_gap(scene: Scene, lane: int) -> float:
    gaps = [y - scene.ego_y for y, ln in scene.others if ln == lane and y - scene.ego_y > 0]
    return min(gaps) if gaps else math.inf


def _band_clear(scene: Scene, lane: int, half: float) -> bool:
    return not any(ln == lane and abs(y - scene.ego_y) <= half for y, ln in scene.others)


def rule_policy_decide(scene: Scene, cfg: RuleConfig = RuleConfig()) -> MetaAction:
    """Gap-acceptance rules on the ego lane's front gap and the adjacent lanes."""
    gap = _front_gap(scene, scene.ego_lane)
    if gap < cfg.d1:
        lon = Longitudinal.BRAKE
    elif gap < cfg.d2:
        lon = Longitudinal.DECELERATE
    elif gap > 2 * cfg.d2 and scene.ego_v < cfg.speed_p75:
        lon = Longitudinal.ACCELERATE
    else:
        lon = Longitudinal.CRUISE

    lat = Lateral.SAME_LANE
    best = 2 * gap
    if math.isfinite(gap):
        for lane, choice in ((scene.ego_lane - 1, Lateral.SOFT_LEFT), (scene.ego_lane + 1, Lateral.SOFT_RIGHT)):
            if not 1 <= lane <= cfg.n_lanes:
                continue
            g = _front_gap(scene, lane)
            if g > best and _band_clear(scene, lane, 0.5 * cfg.l):
                lat, best = choice, g
    return Maneuver(lat, lon)


def near_collision_flag(ego_projected, surrounding, cfg: RewardConfig = RewardConfig()) -> bool:
    """True when any surrounding vehicle sits in the negative reward region of the ego."""
    ex, ey = ego_projected
    return any(in_negative_region(ex - sx, ey - sy, cfg) for sx, sy in surrounding)


class DrivingEnv:
    """Gym-style reset/step over one FrameIndex.

    ``predictor`` is any object with ``predict(histories (B, p, 2), horizon)``;
    a trained ``MnnParams`` in normal use.
    """

    def __init__(self, index: FrameIndex, predictor, reward_cfg: RewardConfig | None = None,
                 controls: ControlTable = DEFAULT_CONTROLS, spec: GridSpec = DEFAULT_SPEC,
                 sensor_range: float = SENSOR_RANGE, name: str = "dataset", ego_ids=None):
        self.index = index
        self.ego_ids = None if ego_ids is None else sorted(int(v) for v in ego_ids)
        self.predictor = predictor
        self.reward_cfg = reward_cfg or RewardConfig(lane_width=index.meta.lane_width,
                                                     n_lanes=index.meta.n_lanes)
        self.controls = controls
        self.spec = spec
        self.sensor_range = sensor_range
        self.name = name
        rc = self.reward_cfg
        self.rule_config = RuleConfig(rc.d1, rc.d2, rc.l, float(np.percentile(index.speeds(), 75)),
                                      index.meta.n_lanes)
        self.lane_width = index.meta.lane_width
        self.vehicle_id = None
        self.done = True
        self.trace: list[dict] = []

    # episode bookkeeping -----------------------------------------------------------------
    def episode_bounds(self, vehicle_id: int) -> tuple[int, int]:
        """(start, end) frames: start leaves a full grid history, end leaves the 5 s label lookahead."""
        track = self.index.tracks.get(vehicle_id)
        if track is None:
            raise EpisodeError(f"unknown vehicle {vehicle_id}")
        start = track.first_frame + self.spec.past - 1  # history t-past+1 .. t is all recorded
        end = track.last_frame - SPEED_WINDOW
        if end <= start:
            raise EpisodeError(f"vehicle {vehicle_id}: track of {len(track)} frames is too short")
        return start, end

    def episode_length(self, vehicle_id: int) -> int:
        start, end = self.episode_bounds(vehicle_id)
        return end - start

    def episode_vehicles(self) -> list[int]:
        out = []
        for vid, t in sorted(self.index.tracks.items()):
            if self.ego_ids is not None and vid not in self.ego_ids:
                continue
            if t.last_frame - SPEED_WINDOW > t.first_frame + self.spec.past - 1:
                out.append(vid)
        return out

    # core API --------------------------------------------------------------------------------
    def reset(self, vehicle_id: int) -> np.ndarray:
        self.start, self.end = self.episode_bounds(vehicle_id)
        self._place(vehicle_id, self.start)
        self.done = False
        self.trace = []
        return self._observe()

    def recorded_observation(self, vehicle_id: int, frame: int) -> np.ndarray:
        """Grid seen by the recorded driver at ``frame``; leaves no episode running."""
        start, end = self.episode_bounds(vehicle_id)
        if not start <= frame <= end:
            raise EpisodeError(f"frame {frame} outside episode [{start}, {end}] of vehicle {vehicle_id}")
        self.start, self.end = start, end
        self._place(vehicle_id, frame)
        self.done = True
        return self._observe()

    def _place(self, vehicle_id: int, frame: int) -> None:
        """Put the ego on its recorded track at ``frame`` with the recorded history."""
        track = self.index.tracks[vehicle_id]
        self.vehicle_id = vehicle_id
        self.track = track
        self.cursor = frame
        i = track.offset(frame)
        self.ego = estimate_state((track.x[i - 1], track.y[i - 1]), (track.x[i], track.y[i]))
        self._x0, self._lane0 = float(track.x[i]), int(track.lane[i])
        lo = i - self.spec.past + 1
        self.history = deque(((float(track.x[k]), float(track.y[k]), int(track.lane[k]))
                              for k in range(lo, i + 1)), maxlen=self.spec.past)

    def ego_lane(self, x: float | None = None) -> int:
        x = self.ego.x if x is None else x
        return self._lane0 + int(math.floor((x - self._x0) / self.lane_width + 0.5))

    def surrounding(self, frame: int | None = None, x: float | None = None, y: float | None = None):
        """Replayed vehicles in sensor range of a position, as (ids, x, y, lane) sorted by id."""
        frame = self.cursor if frame is None else frame
        x = self.ego.x if x is None else x
        y = self.ego.y if y is None else y
        vids, xs, ys, lanes, _ = nearby(self.index, frame, y, self.ego_lane(x), self.vehicle_id,
                                        self.sensor_range)
        return vids, xs, ys, lanes

    def scene(self) -> Scene:
        vids, _, ys, lanes = self.surrounding()
        return Scene(self.ego.y, self.ego.v, self.ego_lane(),
                     tuple((float(y), int(ln)) for y, ln in zip(ys, lanes)))

    def recorded_scene(self, frame: int | None = None) -> Scene:
        frame = self.cursor if frame is None else frame
        p = self.track.point(frame)
        vids, _, ys, lanes, _ = nearby(self.index, frame, p.local_y, p.lane_id, self.vehicle_id,
                                       self.sensor_range)
        return Scene(p.local_y, p.velocity, p.lane_id,
                     tuple((float(y), int(ln)) for y, ln in zip(ys, lanes)))

    def human_label(self, frame: int | None = None) -> Maneuver | None:
        frame = self.cursor if frame is None else frame
        try:
            return Maneuver(label_lateral(self.track, frame), label_longitudinal(self.track, frame))
        except BoundaryError:
            return None

    def rule_label(self, frame: int | None = None) -> Maneuver:
        return rule_policy_decide(self.recorded_scene(frame), self.rule_config)

    def step(self, action) -> StepResult:
        if self.done:
            raise ProtocolError("step() called on a finished episode; call reset()")
        action = MetaAction.of(*action)
        decision_frame = self.cursor
        human = self.human_label(decision_frame)
        rule = self.rule_label(decision_frame)
        v_before = self.ego.v

        self.ego = step_unicycle(self.ego, action_to_control(action, self.controls), DT)
        self.cursor += 1
        self.history.append((self.ego.x, self.ego.y, self.ego_lane()))

        _, xs, ys, _ = self.surrounding()
        others = list(zip(xs.tolist(), ys.tolist()))
        k = self.track.offset(self.cursor)
        actual = (float(self.track.x[k]), float(self.track.y[k]))
        reward = total_reward((self.ego.x, self.ego.y), actual, others, self.reward_cfg)
        near = near_collision_flag((self.ego.x, self.ego.y), others, self.reward_cfg)
        self.done = self.cursor >= self.end
        obs = self._observe()
        info = {"frame": self.cursor, "human_label": human, "rule_label": rule,
                "near_collision": near, "v_before": v_before, "v_after": self.ego.v}
        self.trace.append({
            "frame": self.cursor, "x": self.ego.x, "y": self.ego.y, "v": self.ego.v, "phi": self.ego.phi,
            "action": str(action), "r_dis": reward.r_dis, "r_imit": reward.r_imit,
            "r_offroad": reward.r_offroad, "reward": reward.total, "near_collision": int(near),
        })
        return StepResult(obs, reward, self.done, info)

    # observation -------------------------------------------------------------------------------
    def _observe(self) -> np.ndarray:
        frame = self.cursor
        past = self.spec.past
        ego_hist = np.array(self.history, dtype=float)
        vids, xs, ys, lanes = self.surrounding(frame)
        histories, pred_inputs = {}, []
        for vid in vids.tolist():
            t = self.index.tracks[vid]
            rows = np.full((past, 3), np.nan)
            lo = max(t.first_frame, frame - past + 1)
            a, b = t.offset(lo), t.offset(frame) + 1
            rows[past - (b - a):] = np.column_stack([t.x[a:b], t.y[a:b], t.lane[a:b]])
            histories[vid] = rows
            pos = np.column_stack([t.x[a:b], t.y[a:b]])
            if len(pos) < 2:
                # first sighting: back-fill one frame from the recorded speed
                pos = np.vstack([pos[0] - (0.0, t.v[a] * DT), pos])
            pred_inputs.append(pos)
        preds = predict_many(self.predictor, pred_inputs, self.spec.future) if pred_inputs else []
        predictions = dict(zip(vids.tolist(), preds))
        return build_grid(ego_hist, histories, predictions, self.spec, self.lane_width)

    def write_trace(self, path) -> None:
        cols = ["frame", "x", "y", "v", "phi", "action", "r_dis", "r_imit", "r_offroad",
                "reward", "near_collision"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(self.trace)


class RulePolicy:
    name = "rule"

    def __call__(self, obs, env: DrivingEnv) -> Maneuver:
        return rule_policy_decide(env.scene(), env.rule_config)


class RandomPolicy:
    name = "random"

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def __call__(self, obs, env=None) -> Maneuver:
        return Maneuver(Lateral(int(self.rng.integers(5))), Longitudinal(int(self.rng.integers(4))))


class ScriptedPolicy:
    """Cycles through a fixed action sequence."""

    name = "scripted"

    def __init__(self, actions):
        self.actions = [MetaAction.of(*a) for a in actions]
        self.k = 0

    def __call__(self, obs, env=None) -> Maneuver:
        a = self.actions[self.k % len(self.actions)]
        self.k += 1
        return a

    def reset(self):
        self.k = 0
