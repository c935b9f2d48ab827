"""Small synthetic worlds for smoke tests, demos and learnability checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import DrivingEnv
from .grid import DEFAULT_SPEC, GridSpec, build_grid
from .imitation import LabeledGrids
from .maneuvers import Lateral, Longitudinal
from .trajectory import DT, FrameIndex, LaneConfig, VehicleTrack


class ConstantVelocityPredictor:
    """Extrapolates the last observed increment; a stand-in for a trained MNN."""

    def predict(self, histories, horizon: int) -> np.ndarray:
        hist = np.asarray(histories, dtype=float)
        step = hist[:, -1] - hist[:, -2]
        k = np.arange(1, horizon + 1)[None, :, None]
        return hist[:, -1][:, None, :] + k * step[:, None, :]


@dataclass
class ScenarioDataset:
    index: FrameIndex
    ego_ids: list[int]
    name: str = "scenario"

    def env(self, predictor=None, **kw) -> DrivingEnv:
        return DrivingEnv(self.index, predictor or ConstantVelocityPredictor(), name=self.name,
                          ego_ids=self.ego_ids, **kw)


def single_lead(n_pairs: int = 8, steps: int = 30, seed: int = 0, n_lanes: int = 3,
                lane_width: float = 12.0, ego_speed=(35.0, 45.0), lead_speed=(15.0, 25.0),
                gap=(50.0, 70.0), name: str = "single_lead") -> ScenarioDataset:
    """Ego pairs, each closing on a slower lead in the same lane.

    The recorded ego brakes hard until it matches the lead's speed, so an agent
    that keeps speed or slows down too gently runs into the lead. Pairs are
    spaced far apart along the road so they never see each other. Speeds are in
    ft/s and gaps in feet; the defaults leave the braking human at least 20 ft
    behind the lead.
    """
    rng = np.random.default_rng(seed)
    past, tail = DEFAULT_SPEC.past, 50
    n = past + steps + tail
    frames = np.arange(1, n + 1)
    k0 = past - 1  # offset of the first decision frame
    lane = (n_lanes + 1) // 2
    x = np.full(n, (lane - 0.5) * lane_width)
    lanes = np.full(n, lane)
    tracks, egos = {}, []
    for p in range(n_pairs):
        v_ego = rng.uniform(*ego_speed)
        v_lead = rng.uniform(*lead_speed)
        gap0 = rng.uniform(*gap)
        base = 3000.0 * p

        v = np.full(n, v_ego)
        v[k0 + 1:] = np.maximum(v_ego - 1.5 * np.arange(1, n - k0), v_lead)
        y = _integrate(v, k0, base)
        vl = np.full(n, v_lead)
        yl = _integrate(vl, k0, base + gap0)

        ego_id, lead_id = 2 * p + 1, 2 * p + 2
        tracks[ego_id] = VehicleTrack(ego_id, frames, x, y, lanes, v)
        tracks[lead_id] = VehicleTrack(lead_id, frames, x.copy(), yl, lanes, vl)
        egos.append(ego_id)
    return ScenarioDataset(FrameIndex(tracks, LaneConfig(n_lanes, lane_width)), egos, name)


def _integrate(v: np.ndarray, anchor: int, y_anchor: float) -> np.ndarray:
    """Positions with ``y[anchor] = y_anchor`` and ``y[k+1] = y[k] + v[k] dt``."""
    y = np.concatenate([[0.0], np.cumsum(v[:-1]) * DT])
    return y - y[anchor] + y_anchor


# --- separable imitation data ------------------------------------------------------------

# lead gap bands in feet -> longitudinal class
GAP_BANDS = ((7.5, 22.5, Longitudinal.BRAKE), (22.5, 37.5, Longitudinal.DECELERATE),
             (37.5, 67.5, Longitudinal.CRUISE))


def gap_label(gap: float | None) -> Longitudinal:
    if gap is not None:
        for lo, hi, lab in GAP_BANDS:
            if lo <= gap < hi:
                return lab
    return Longitudinal.ACCELERATE


def separable_grids(n: int, seed: int = 0, spec: GridSpec = DEFAULT_SPEC, speed: float = 40.0,
                    lane_width: float = 12.0) -> LabeledGrids:
    """Grids whose labels are a function of the scene.

    The lead gap picks the longitudinal class; a vehicle alongside in the left
    lane asks for a soft right move, one on the right for a soft left move,
    neither keeps the lane. Every vehicle drives at the ego's speed, so the
    layout is the same in every past and future channel.
    """
    rng = np.random.default_rng(seed)
    past, future = spec.past, spec.future
    t = np.arange(-past + 1, 1) * speed * DT
    ego = np.column_stack([np.full(past, 1.5 * lane_width), t, np.full(past, 2)])
    ahead = (np.arange(1, future + 1) * speed * DT)[:, None]
    grids = np.empty((n,) + spec.shape)
    lat = np.empty(n, np.int64)
    lon = np.empty(n, np.int64)
    for i in range(n):
        hist, preds = {}, {}

        def add(vid, dy, lane):
            h = ego.copy()
            h[:, 0] = (lane - 0.5) * lane_width
            h[:, 1] += dy
            h[:, 2] = lane
            hist[vid] = h
            preds[vid] = np.column_stack([np.full(future, h[-1, 0]), h[-1, 1] + ahead[:, 0]])

        gap = None
        if rng.random() < 0.8:
            gap = rng.uniform(7.5, 90.0)
            add(1, gap, 2)
        side = rng.integers(3)
        if side == 1:
            add(2, rng.uniform(-7.0, 7.0), 1)
            lat[i] = Lateral.SOFT_RIGHT
        elif side == 2:
            add(3, rng.uniform(-7.0, 7.0), 3)
            lat[i] = Lateral.SOFT_LEFT
        else:
            lat[i] = Lateral.SAME_LANE
        lon[i] = gap_label(gap)
        grids[i] = build_grid(ego, hist, preds, spec, lane_width)
    return LabeledGrids(grids, lat, lon)
