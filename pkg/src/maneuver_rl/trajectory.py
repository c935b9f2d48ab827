"""Trajectory ingestion, frame indexing, maneuver labelling and dataset statistics.

Geometry is kept in feet throughout: ``local_x`` is lateral (increasing to the
right across lanes) and ``local_y`` is longitudinal (increasing along the
direction of travel). Frames are sampled at 10 Hz.
"""
from __future__ import annotations

import csv
import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .maneuvers import Lateral, Longitudinal, ManeuverLabel

FRAME_RATE = 10.0
DT = 1.0 / FRAME_RATE
FT_TO_M = 0.3048
SENSOR_RANGE = 90.0

REQUIRED_COLUMNS = ("Vehicle_ID", "Frame_ID", "Local_X", "Local_Y", "Lane_ID", "v_Vel")

# labelling windows, in frames
LANE_WINDOW = 40
HARD_CHANGE_WINDOW = 10
SPEED_WINDOW = 50
BRAKE_RATIO = 0.8
DECEL_RATIO = 0.95
ACCEL_RATIO = 1.05


class SchemaError(ValueError):
    pass


class TrackError(ValueError):
    def __init__(self, vehicle_id: int, message: str):
        super().__init__(f"vehicle {vehicle_id}: {message}")
        self.vehicle_id = vehicle_id


class FrameLookupError(KeyError):
    pass


class BoundaryError(ValueError):
    """Not enough history or future around a frame to label it."""


class EmptyDatasetError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LaneConfig:
    n_lanes: int | None = None  # None: infer from the largest lane id
    lane_width: float = 12.0
    frame_rate: float = FRAME_RATE


@dataclass(frozen=True)
class TrajectoryPoint:
    vehicle_id: int
    frame_id: int
    local_x: float
    local_y: float
    lane_id: int
    velocity: float


class VehicleTrack:
    """Contiguous 10 Hz samples of one vehicle, stored column-wise."""

    def __init__(self, vehicle_id, frames, x, y, lane, v):
        self.vehicle_id = int(vehicle_id)
        # private copies: the arrays are frozen below
        self.frames = np.array(frames, dtype=np.int64)
        self.x = np.array(x, dtype=np.float64)
        self.y = np.array(y, dtype=np.float64)
        self.lane = np.array(lane, dtype=np.int64)
        self.v = np.array(v, dtype=np.float64)
        n = len(self.frames)
        if not all(len(a) == n for a in (self.x, self.y, self.lane, self.v)):
            raise TrackError(self.vehicle_id, "column lengths differ")
        if n == 0:
            raise TrackError(self.vehicle_id, "empty track")
        steps = np.diff(self.frames)
        if np.any(steps <= 0):
            raise TrackError(self.vehicle_id, "frame ids are not strictly increasing")
        if np.any(steps != 1):
            raise TrackError(self.vehicle_id, "track has missing frames")
        if np.any(self.v < 0):
            raise TrackError(self.vehicle_id, "negative velocity")
        for a in (self.frames, self.x, self.y, self.lane, self.v):
            a.setflags(write=False)

    def __len__(self) -> int:
        return len(self.frames)

    def __repr__(self) -> str:
        return (f"VehicleTrack(id={self.vehicle_id}, frames={self.first_frame}"
                f"..{self.last_frame})")

    @property
    def first_frame(self) -> int:
        return int(self.frames[0])

    @property
    def last_frame(self) -> int:
        return int(self.frames[-1])

    def has_frame(self, frame: int) -> bool:
        return self.first_frame <= frame <= self.last_frame

    def offset(self, frame: int) -> int:
        if not self.has_frame(frame):
            raise FrameLookupError(f"vehicle {self.vehicle_id} absent at frame {frame}")
        return int(frame) - self.first_frame

    def point(self, frame: int) -> TrajectoryPoint:
        i = self.offset(frame)
        return TrajectoryPoint(self.vehicle_id, int(self.frames[i]), float(self.x[i]),
                               float(self.y[i]), int(self.lane[i]), float(self.v[i]))

    @property
    def points(self) -> list[TrajectoryPoint]:
        return [self.point(f) for f in self.frames]

    def positions(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def equals(self, other: "VehicleTrack") -> bool:
        return (self.vehicle_id == other.vehicle_id
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("frames", "x", "y", "lane", "v")))


class _FramesView(Mapping):
    def __init__(self, index: "FrameIndex"):
        self._index = index

    def __getitem__(self, frame):
        rows = self._index._frame_rows(frame)
        if rows is None:
            raise KeyError(frame)
        vids, x, y, lane, v = rows
        return [(int(vids[i]), TrajectoryPoint(int(vids[i]), int(frame), float(x[i]),
                                               float(y[i]), int(lane[i]), float(v[i])))
                for i in range(len(vids))]

    def __iter__(self) -> Iterator[int]:
        return iter(int(f) for f in self._index._frame_ids)

    def __len__(self) -> int:
        return len(self._index._frame_ids)


class FrameIndex:
    """Per-vehicle tracks plus a per-frame view of the same samples.

    Immutable after construction, so one instance can be shared by many
    environments.
    """

    def __init__(self, tracks: Mapping[int, VehicleTrack], meta: LaneConfig | None = None,
                 dropped_rows: int = 0):
        if not tracks:
            raise EmptyDatasetError("no tracks")
        self.tracks: dict[int, VehicleTrack] = {int(k): tracks[k] for k in sorted(tracks)}
        meta = meta or LaneConfig()
        max_lane = max(int(t.lane.max()) for t in self.tracks.values())
        if meta.n_lanes is None:
            meta = LaneConfig(max_lane, meta.lane_width, meta.frame_rate)
        self.meta = meta
        self.dropped_rows = dropped_rows
        for t in self.tracks.values():
            if t.lane.min() < 1 or t.lane.max() > meta.n_lanes:
                raise TrackError(t.vehicle_id, f"lane id outside [1, {meta.n_lanes}]")

        vids = np.concatenate([np.full(len(t), t.vehicle_id) for t in self.tracks.values()])
        cols = [np.concatenate([getattr(t, k) for t in self.tracks.values()])
                for k in ("frames", "x", "y", "lane", "v")]
        order = np.lexsort((vids, cols[0]))
        self._vids = vids[order]
        self._frame, self._x, self._y, self._lane, self._v = (c[order] for c in cols)
        self._frame_ids, starts = np.unique(self._frame, return_index=True)
        self._starts = np.append(starts, len(self._frame))
        self.frames = _FramesView(self)

    def __repr__(self) -> str:
        return f"FrameIndex({len(self.tracks)} tracks, {len(self._frame_ids)} frames)"

    def __eq__(self, other) -> bool:
        if not isinstance(other, FrameIndex):
            return NotImplemented
        return (self.meta == other.meta and self.tracks.keys() == other.tracks.keys()
                and all(t.equals(other.tracks[k]) for k, t in self.tracks.items()))

    __hash__ = None

    @property
    def vehicle_ids(self) -> list[int]:
        return list(self.tracks)

    @property
    def n_samples(self) -> int:
        return len(self._frame)

    def _frame_rows(self, frame):
        k = np.searchsorted(self._frame_ids, frame)
        if k >= len(self._frame_ids) or self._frame_ids[k] != frame:
            return None
        sl = slice(self._starts[k], self._starts[k + 1])
        return self._vids[sl], self._x[sl], self._y[sl], self._lane[sl], self._v[sl]

    def at_frame(self, frame: int):
        """Column arrays ``(vehicle_ids, x, y, lane, v)`` for one frame, sorted by id."""
        rows = self._frame_rows(frame)
        if rows is None:
            empty = np.empty(0)
            return empty.astype(np.int64), empty, empty, empty.astype(np.int64), empty
        return rows

    def speeds(self) -> np.ndarray:
        return self._v


def ingest_csv(path, meta: LaneConfig | None = None, on_bad_track: str = "raise") -> FrameIndex:
    """Read an NGSIM-style CSV into a FrameIndex.

    Only the six required columns are used. Rows with a missing value in any
    of them are dropped and counted in ``FrameIndex.dropped_rows``. With
    ``on_bad_track="skip"`` vehicles whose frames are not contiguous and
    increasing are left out instead of raising.
    """
    path = Path(path)
    header = pd.read_csv(path, nrows=0).columns
    header = [c.strip() for c in header]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {', '.join(missing)}")
    df = pd.read_csv(path, skipinitialspace=True, float_precision="round_trip")
    df.columns = [c.strip() for c in df.columns]
    df = df[list(REQUIRED_COLUMNS)]
    for c in REQUIRED_COLUMNS:
        df[c] = pd.to_numeric(df[c], errors="coerce")
    n_before = len(df)
    df = df.dropna()
    dropped = n_before - len(df)

    tracks = {}
    for vid, g in df.groupby("Vehicle_ID", sort=True):
        vid = int(vid)
        try:
            tracks[vid] = VehicleTrack(vid, g["Frame_ID"].to_numpy(np.int64),
                                       g["Local_X"].to_numpy(np.float64),
                                       g["Local_Y"].to_numpy(np.float64),
                                       g["Lane_ID"].to_numpy(np.int64),
                                       g["v_Vel"].to_numpy(np.float64))
        except TrackError:
            if on_bad_track != "skip":
                raise
    return FrameIndex(tracks, meta, dropped_rows=dropped)


def write_csv(index: FrameIndex, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REQUIRED_COLUMNS)
        for t in index.tracks.values():
            for i in range(len(t)):
                w.writerow([t.vehicle_id, int(t.frames[i]), repr(float(t.x[i])),
                            repr(float(t.y[i])), int(t.lane[i]), repr(float(t.v[i]))])


def save_index(index: FrameIndex, path) -> None:
    """Binary cache of a FrameIndex (numpy ``.npz``)."""
    ts = list(index.tracks.values())
    np.savez(path, vid=np.concatenate([np.full(len(t), t.vehicle_id) for t in ts]),
             frame=np.concatenate([t.frames for t in ts]), x=np.concatenate([t.x for t in ts]),
             y=np.concatenate([t.y for t in ts]), lane=np.concatenate([t.lane for t in ts]),
             v=np.concatenate([t.v for t in ts]),
             meta=np.array([index.meta.n_lanes, index.meta.lane_width, index.meta.frame_rate]),
             dropped=np.array(index.dropped_rows))


def load_index(path) -> FrameIndex:
    with np.load(path) as z:
        vid, cols = z["vid"], [z[k] for k in ("frame", "x", "y", "lane", "v")]
        n_lanes, width, rate = z["meta"].tolist()
        dropped = int(z["dropped"])
    cuts = np.flatnonzero(np.diff(vid)) + 1
    tracks = {}
    for sl in np.split(np.arange(len(vid)), cuts):
        v = int(vid[sl[0]])
        tracks[v] = VehicleTrack(v, *(c[sl] for c in cols))
    return FrameIndex(tracks, LaneConfig(int(n_lanes), width, rate), dropped_rows=dropped)


def lane_of_x(x: float, lane_width: float) -> int:
    """Lane id whose band ``[(k-1)w, kw)`` contains ``x``; may fall outside the road."""
    return int(math.floor(x / lane_width)) + 1


def nearby(index: FrameIndex, frame: int, y: float, lane: int, exclude: int | None = None,
           sensor_range: float = SENSOR_RANGE):
    """Rows of vehicles within ``sensor_range`` longitudinally and one lane laterally."""
    vids, x, ys, lanes, v = index.at_frame(frame)
    keep = (np.abs(ys - y) <= sensor_range) & (np.abs(lanes - lane) <= 1)
    if exclude is not None:
        keep &= vids != exclude
    return vids[keep], x[keep], ys[keep], lanes[keep], v[keep]


def neighbors(index: FrameIndex, ego_id: int, frame: int,
              sensor_range: float = SENSOR_RANGE) -> list[tuple[int, TrajectoryPoint]]:
    track = index.tracks.get(ego_id)
    if track is None or not track.has_frame(frame):
        raise FrameLookupError(f"vehicle {ego_id} absent at frame {frame}")
    ego = track.point(frame)
    vids, x, y, lane, v = nearby(index, frame, ego.local_y, ego.lane_id, ego_id, sensor_range)
    return [(int(vids[i]), TrajectoryPoint(int(vids[i]), frame, float(x[i]), float(y[i]),
                                           int(lane[i]), float(v[i])))
            for i in range(len(vids))]


# --- labels -------------------------------------------------------------------

def _lateral_from_lanes(before, after, early):
    if before == after:
        return Lateral.SAME_LANE
    hard = early != before
    if after < before:
        return Lateral.HARD_LEFT if hard else Lateral.SOFT_LEFT
    return Lateral.HARD_RIGHT if hard else Lateral.SOFT_RIGHT


def _longitudinal_from_speeds(v_now, future_mean):
    if future_mean < BRAKE_RATIO * v_now:
        return Longitudinal.BRAKE
    if future_mean < DECEL_RATIO * v_now:
        return Longitudinal.DECELERATE
    if future_mean > ACCEL_RATIO * v_now:
        return Longitudinal.ACCELERATE
    return Longitudinal.CRUISE


def label_lateral(track: VehicleTrack, t: int) -> Lateral:
    """Lane-change label from lane ids 4 s before and 4 s after frame ``t``.

    A change already visible 1 s after ``t`` counts as hard.
    """
    if not (track.has_frame(t - LANE_WINDOW) and track.has_frame(t + LANE_WINDOW)):
        raise BoundaryError(f"vehicle {track.vehicle_id}: frame {t} lacks +-{LANE_WINDOW} frames")
    i = track.offset(t)
    lane = track.lane
    return _lateral_from_lanes(lane[i - LANE_WINDOW], lane[i + LANE_WINDOW],
                               lane[i + HARD_CHANGE_WINDOW])


def label_longitudinal(track: VehicleTrack, t: int) -> Longitudinal:
    """Speed label from the mean speed over the next 5 s relative to the current speed."""
    if not (track.has_frame(t) and track.has_frame(t + SPEED_WINDOW)):
        raise BoundaryError(f"vehicle {track.vehicle_id}: frame {t} lacks {SPEED_WINDOW} future frames")
    i = track.offset(t)
    future = track.v[i + 1:i + SPEED_WINDOW + 1].mean()
    return _longitudinal_from_speeds(track.v[i], future)


def label(track: VehicleTrack, t: int) -> ManeuverLabel:
    return ManeuverLabel(label_lateral(track, t), label_longitudinal(track, t))


def labelable_frames(track: VehicleTrack) -> np.ndarray:
    """Frames with the full +-4 s lane window and the 5 s speed window."""
    lo = track.first_frame + LANE_WINDOW
    hi = track.last_frame - max(LANE_WINDOW, SPEED_WINDOW)
    return np.arange(lo, hi + 1, dtype=np.int64)


def track_labels(track: VehicleTrack) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised labels (lateral codes, longitudinal codes) for ``labelable_frames``."""
    frames = labelable_frames(track)
    if len(frames) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    i = frames - track.first_frame
    lane = track.lane
    before, after, early = lane[i - LANE_WINDOW], lane[i + LANE_WINDOW], lane[i + HARD_CHANGE_WINDOW]
    hard = early != before
    lat = np.full(len(i), int(Lateral.SAME_LANE))
    left, right = after < before, after > before
    lat[left & hard] = Lateral.HARD_LEFT
    lat[left & ~hard] = Lateral.SOFT_LEFT
    lat[right & hard] = Lateral.HARD_RIGHT
    lat[right & ~hard] = Lateral.SOFT_RIGHT

    csum = np.concatenate([[0.0], np.cumsum(track.v)])
    future = (csum[i + SPEED_WINDOW + 1] - csum[i + 1]) / SPEED_WINDOW
    v = track.v[i]
    lon = np.full(len(i), int(Longitudinal.CRUISE))
    lon[future > ACCEL_RATIO * v] = Longitudinal.ACCELERATE
    lon[future < DECEL_RATIO * v] = Longitudinal.DECELERATE
    lon[future < BRAKE_RATIO * v] = Longitudinal.BRAKE
    return lat, lon


LABEL_CLASSES = (
    "same_lane", "hard_left", "soft_left", "hard_right", "soft_right",
    "accelerate", "brake", "cruise", "decelerate", "same_lane_and_cruise",
)


@dataclass
class LabelDistribution:
    counts: dict[str, int]
    total: int

    @property
    def percent(self) -> dict[str, float]:
        return {k: 100.0 * c / self.total for k, c in self.counts.items()}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "count", "percent"])
            for k in LABEL_CLASSES:
                w.writerow([k, self.counts[k], f"{100.0 * self.counts[k] / self.total:.4f}"])
            w.writerow(["total", self.total, "100.0000"])


def label_distribution(index: FrameIndex) -> LabelDistribution:
    """Class frequencies over every labelable (vehicle, frame) sample."""
    lat_counts = np.zeros(len(Lateral), np.int64)
    lon_counts = np.zeros(len(Longitudinal), np.int64)
    both = 0
    for track in index.tracks.values():
        lat, lon = track_labels(track)
        lat_counts += np.bincount(lat, minlength=len(Lateral))
        lon_counts += np.bincount(lon, minlength=len(Longitudinal))
        both += int(np.sum((lat == Lateral.SAME_LANE) & (lon == Longitudinal.CRUISE)))
    total = int(lat_counts.sum())
    if total == 0:
        raise EmptyDatasetError("no labelable samples (tracks shorter than the labelling windows)")
    counts = {m.label: int(lat_counts[m]) for m in Lateral}
    counts.update({m.label: int(lon_counts[m]) for m in Longitudinal})
    counts["same_lane_and_cruise"] = both
    return LabelDistribution({k: counts[k] for k in LABEL_CLASSES}, total)


def velocity_stats(index: FrameIndex) -> dict[str, float]:
    """Mean, spread and quartiles of recorded speed, in m/s."""
    v = index.speeds() * FT_TO_M
    p25, p50, p75 = np.percentile(v, [25, 50, 75])
    return {"mean": float(v.mean()), "std": float(v.std()), "p25": float(p25),
            "p50": float(p50), "p75": float(p75)}


# --- synthetic traffic ----------------------------------------------------------

@dataclass
class SynthConfig:
    """Scripted traffic: lane keeping at constant speed plus optional events.

    ``lane_change_rate`` and ``brake_rate`` are the fractions of vehicles that
    perform one lane change / one braking event; the count is rounded.
    """

    n_vehicles: int = 10
    n_frames: int = 300
    n_lanes: int = 5
    lane_width: float = 12.0
    lane_change_rate: float = 0.0
    brake_rate: float = 0.0
    speed_mean: float = 40.0  # ft/s
    speed_std: float = 0.0
    spacing: float = 80.0  # ft between consecutive vehicles of a lane
    brake_decel: float = 1.5  # ft/s per frame
    brake_floor: float = 0.5  # braking stops at this fraction of the initial speed
    change_frames: int = 30
    seed: int = 0
    lanes: tuple[int, ...] | None = field(default=None)  # restrict placement to these lanes


def synth_generate(config: SynthConfig) -> FrameIndex:
    c = config
    if c.n_vehicles <= 0:
        raise ConfigError("n_vehicles must be positive")
    if c.n_lanes < 1:
        raise ConfigError("n_lanes must be >= 1")
    if c.n_lanes == 1 and c.lane_change_rate > 0:
        raise ConfigError("lane changes requested on a single-lane road")
    for name in ("lane_change_rate", "brake_rate"):
        r = getattr(c, name)
        if not 0.0 <= r <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1]")
    if c.n_frames < 2:
        raise ConfigError("n_frames must be >= 2")

    rng = np.random.default_rng(c.seed)
    n = c.n_vehicles
    lanes_allowed = np.array(c.lanes if c.lanes else range(1, c.n_lanes + 1))
    lanes = lanes_allowed[np.arange(n) % len(lanes_allowed)]
    rng.shuffle(lanes)
    lane_speed = {int(k): c.speed_mean + c.speed_std * rng.standard_normal()
                  for k in lanes_allowed}
    n_change = int(round(c.lane_change_rate * n))
    n_brake = int(round(c.brake_rate * n))
    order = rng.permutation(n)
    changers = set(order[:n_change].tolist())
    brakers = set(rng.permutation(n)[:n_brake].tolist())

    slot = {int(k): 0 for k in lanes_allowed}
    frames = np.arange(1, c.n_frames + 1)
    tracks = {}
    for i in range(n):
        lane0 = int(lanes[i])
        y0 = slot[lane0] * c.spacing + rng.uniform(0, 0.25 * c.spacing)
        slot[lane0] += 1
        v0 = max(lane_speed[lane0], 1.0)
        v = np.full(c.n_frames, v0)
        if i in brakers:
            start = int(rng.integers(c.n_frames // 4, max(c.n_frames // 2, c.n_frames // 4 + 1)))
            k = np.arange(c.n_frames - start)
            v[start:] = np.maximum(v0 - c.brake_decel * (k + 1), c.brake_floor * v0)
        y = y0 + np.concatenate([[0.0], np.cumsum(v[:-1]) * DT])

        x = np.full(c.n_frames, (lane0 - 0.5) * c.lane_width)
        if i in changers:
            step = -1 if lane0 == c.n_lanes else 1 if lane0 == 1 else int(rng.choice([-1, 1]))
            start = int(rng.integers(c.n_frames // 4, max(c.n_frames // 2, c.n_frames // 4 + 1)))
            m = min(c.change_frames, c.n_frames - start)
            s = 0.5 - 0.5 * np.cos(np.pi * np.arange(1, m + 1) / m)
            x[start:start + m] += step * c.lane_width * s
            x[start + m:] += step * c.lane_width
        lane = np.clip(np.floor(x / c.lane_width).astype(np.int64) + 1, 1, c.n_lanes)
        vid = i + 1
        tracks[vid] = VehicleTrack(vid, frames, x, y, lane, v)
    return FrameIndex(tracks, LaneConfig(c.n_lanes, c.lane_width))
