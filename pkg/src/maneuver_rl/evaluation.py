"""Comfort and safety metrics, consensus/conflict splits and report tables."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .env import near_collision_flag  # noqa: F401  (re-exported; same predicate as the reward)
from .maneuvers import Maneuver
from .trajectory import DT, FT_TO_M, EmptyDatasetError

SPLITS = ("all", "consensus", "conflict")


class MetricInputError(ValueError):
    pass


def jerk_flags(actions: Sequence) -> np.ndarray:
    """Flag step t when either ordinal jumps by more than one from step t-1.

    The first step has no predecessor and is never flagged, so the result has
    the same length as ``actions``.
    """
    if len(actions) < 2:
        raise MetricInputError("need at least two decisions")
    acts = [Maneuver.of(*a) for a in actions]
    lat = np.array([a.lateral.ordinal for a in acts])
    lon = np.array([a.longitudinal.ordinal for a in acts])
    flags = np.zeros(len(acts), bool)
    flags[1:] = (np.abs(np.diff(lat)) > 1) | (np.abs(np.diff(lon)) > 1)
    return flags


def accelerations(speeds: Sequence[float], dt: float = DT) -> np.ndarray:
    """Per-step accelerations in m/s^2 from speeds in ft/s."""
    v = np.asarray(speeds, dtype=float)
    return np.diff(v) / dt * FT_TO_M


def average_acceleration(speeds: Sequence[float], dt: float = DT, mode: str = "signed") -> float:
    """Mean acceleration over a speed trace; ``mode`` is signed, abs or positive."""
    if len(speeds) < 2:
        raise MetricInputError("need at least two speeds")
    a = accelerations(speeds, dt)
    if mode == "abs":
        a = np.abs(a)
    elif mode == "positive":
        a = np.maximum(a, 0.0)
    elif mode != "signed":
        raise ValueError(f"unknown acceleration mode {mode!r}")
    return math.fsum(a) / len(a)


def is_consensus(human, rule) -> bool:
    h, r = Maneuver.of(*human), Maneuver.of(*rule)
    return h.lateral == r.lateral and h.longitudinal == r.longitudinal


def consensus_split(samples: Iterable) -> tuple[list, list]:
    """Partition ``(human, rule, ...)`` samples into consensus and conflict lists."""
    cons, conf = [], []
    for s in samples:
        (cons if is_consensus(s[0], s[1]) else conf).append(s)
    return cons, conf


@dataclass
class _Acc:
    """Additive metric sums; merging is order independent up to fsum rounding."""

    steps: int = 0
    decisions: int = 0  # steps that have a predecessor decision
    jerks: int = 0
    near: int = 0
    accel: list = field(default_factory=list)

    def add(self, accel: float, jerk: bool | None, near: bool) -> None:
        self.steps += 1
        self.accel.append(accel)
        if jerk is not None:
            self.decisions += 1
            self.jerks += int(jerk)
        self.near += int(near)


@dataclass(frozen=True)
class MetricsReport:
    policy: str
    dataset: str
    split: str
    avg_accel_mps2: float
    uncomfortable_pct: float
    near_collision_pct: float
    abs_accel_mps2: float
    pos_accel_mps2: float
    steps: int

    @classmethod
    def from_acc(cls, policy: str, dataset: str, split: str, acc: _Acc) -> "MetricsReport":
        a = sorted(acc.accel)  # fixed summation order regardless of episode order
        n = len(a)
        mean = (lambda xs: math.fsum(xs) / n) if n else (lambda xs: float("nan"))
        return cls(policy, dataset, split,
                   mean(a), 100.0 * acc.jerks / acc.decisions if acc.decisions else float("nan"),
                   100.0 * acc.near / acc.steps if acc.steps else float("nan"),
                   mean([abs(x) for x in a]), mean([max(x, 0.0) for x in a]), acc.steps)


REPORT_COLUMNS = ("policy", "dataset", "split", "avg_accel_mps2", "uncomfortable_pct",
                  "near_collision_pct", "abs_accel_mps2", "pos_accel_mps2", "steps")


@dataclass
class EpisodeSeries:
    vehicle_id: int
    frames: list = field(default_factory=list)
    accel: list = field(default_factory=list)
    jerk: list = field(default_factory=list)
    near: list = field(default_factory=list)
    consensus: list = field(default_factory=list)


def _rollout(policy, env, vid: int) -> EpisodeSeries:
    series = EpisodeSeries(vid)
    obs = env.reset(vid)
    if hasattr(policy, "reset"):
        policy.reset()
    prev = None
    done = False
    while not done:
        action = Maneuver.of(*policy(obs, env))
        res = env.step(action)
        info = res.info
        human, rule = info["human_label"], info["rule_label"]
        series.frames.append(info["frame"])
        series.accel.append((info["v_after"] - info["v_before"]) / DT * FT_TO_M)
        series.jerk.append(None if prev is None else bool(jerk_flags([prev, action])[1]))
        series.near.append(bool(info["near_collision"]))
        series.consensus.append(None if human is None else is_consensus(human, rule))
        prev = action
        obs, done = res.observation, res.done
    return series


def _rollout_many(policy, env, vids) -> list[EpisodeSeries]:
    return [_rollout(policy, env, vid) for vid in vids]


def evaluate_policy(policy, env, policy_name: str | None = None, vehicles: Sequence[int] | None = None,
                    workers: int = 1) -> tuple[list[MetricsReport], list[EpisodeSeries]]:
    """Roll one episode per eligible vehicle; returns report rows (all, consensus, conflict).

    Steps whose human label is undefined count toward ``all`` only. With
    ``workers > 1`` contiguous blocks of vehicles run in separate processes,
    each with its own copy of the environment and policy.
    """
    vids = list(env.episode_vehicles() if vehicles is None else vehicles)
    if not vids:
        raise EmptyDatasetError(f"dataset '{env.name}' has no vehicle with a full episode")
    name = policy_name or getattr(policy, "name", type(policy).__name__)
    acc = {s: _Acc() for s in SPLITS}
    if workers > 1 and len(vids) > 1:
        blocks = [b.tolist() for b in np.array_split(np.array(vids), min(workers, len(vids)))]
        with ProcessPoolExecutor(len(blocks)) as pool:
            parts = pool.map(_rollout_many, [policy] * len(blocks), [env] * len(blocks), blocks)
            series = [ep for part in parts for ep in part]
    else:
        series = _rollout_many(policy, env, vids)
    for ep in series:
        for a, j, nc, c in zip(ep.accel, ep.jerk, ep.near, ep.consensus):
            acc["all"].add(a, j, nc)
            if c is not None:
                acc["consensus" if c else "conflict"].add(a, j, nc)
    return [MetricsReport.from_acc(name, env.name, s, acc[s]) for s in SPLITS], series


def dataset_near_collisions(env, vehicles: Sequence[int] | None = None) -> list[MetricsReport]:
    """Near-collision rate of the recorded trajectories themselves, per split.

    Each labelable decision frame projects the recorded ego one frame ahead and
    checks the replayed vehicles at that frame.
    """
    index = env.index
    acc = {s: _Acc() for s in SPLITS}
    vids = list(env.episode_vehicles() if vehicles is None else vehicles)
    if not vids:
        raise EmptyDatasetError(f"dataset '{env.name}' has no vehicle with a full episode")
    for vid in vids:
        env.reset(vid)
        track = index.tracks[vid]
        start, end = env.episode_bounds(vid)
        for frame in range(start, end):
            nxt = track.point(frame + 1)
            _, xs, ys, _ = env.surrounding(frame + 1, nxt.local_x, nxt.local_y)
            near = near_collision_flag((nxt.local_x, nxt.local_y), zip(xs.tolist(), ys.tolist()), env.reward_cfg)
            v0, v1 = track.v[track.offset(frame)], nxt.velocity
            a = (v1 - v0) / DT * FT_TO_M
            human = env.human_label(frame)
            acc["all"].add(a, None, near)
            if human is not None:
                acc["consensus" if is_consensus(human, env.rule_label(frame)) else "conflict"].add(a, None, near)
    return [MetricsReport.from_acc("recorded", env.name, s, acc[s]) for s in SPLITS]


def write_report(rows: Iterable[MetricsReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            d = asdict(r)
            w.writerow([_fmt(d[c]) for c in REPORT_COLUMNS])


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def write_plot_data(series: Iterable[EpisodeSeries], path, policy: str = "") -> None:
    """Long-format per-step metric series for external plotting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "vehicle_id", "frame", "accel_mps2", "jerk", "near_collision", "consensus"])
        for ep in series:
            for f, a, j, n, c in zip(ep.frames, ep.accel, ep.jerk, ep.near, ep.consensus):
                w.writerow([policy, ep.vehicle_id, f, f"{a:.6f}", "" if j is None else int(j), int(n),
                            "" if c is None else int(c)])


def compare_policies(policies: dict[str, Callable], env) -> list[MetricsReport]:
    rows = []
    for name, pol in policies.items():
        rows.extend(evaluate_policy(pol, env, name)[0])
    return rows
