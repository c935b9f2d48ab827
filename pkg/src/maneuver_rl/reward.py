"""Three-part step reward: distance regions, imitation error and off-road penalty."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class RewardConfig:
    c1: float = 5.0
    c2: float = 125.0
    k1: float = 2.0
    k2: float = -6.0
    l: float = 15.0  # average vehicle length, ft
    d1: float = 16.0  # l + 1
    d2: float = 25.0  # 1.5 l + 2.5
    lane_width: float = 12.0
    n_lanes: int = 5
    imit_x_weight: float = 0.25
    imit_y_weight: float = 0.1
    imit_scale: float = -0.5

    def __post_init__(self):
        if not self.d1 < self.d2:
            raise ValueError("d1 must be smaller than d2")
        if self.l <= 0:
            raise ValueError("vehicle length must be positive")

    @property
    def road_width(self) -> float:
        return self.n_lanes * self.lane_width


@dataclass(frozen=True)
class RewardBreakdown:
    r_dis: float
    r_imit: float
    r_offroad: float
    p1: int = 0
    p2: int = 0
    p3: int = 0
    n_count: int = 0

    @property
    def p_count(self) -> int:
        return self.p1 + self.p2 + self.p3

    @property
    def total(self) -> float:
        return self.r_dis + self.r_imit + self.r_offroad


# region codes
NEG, P1, P2, P3 = "N", "P1", "P2", "P3"


def region(dx: float, dy: float, cfg: RewardConfig) -> str:
    """Region of a surrounding vehicle at offset (dx, dy) from the ego."""
    half = 0.5 * cfg.l
    if abs(dy) <= half:
        return P1 if abs(dx) >= half else NEG
    d = math.hypot(dx, dy)
    if d <= cfg.d1 and abs(dx) <= half:
        return NEG
    return P2 if d <= cfg.d2 else P3


def in_negative_region(dx: float, dy: float, cfg: RewardConfig) -> bool:
    return region(dx, dy, cfg) == NEG


def distance_reward(ego_pred: Sequence[float], surrounding: Iterable[Sequence[float]],
                    cfg: RewardConfig = RewardConfig()) -> tuple[float, dict]:
    """Distance-region reward; the list order decides which P1 vehicle is rewarded."""
    half = 0.5 * cfg.l
    ex, ey = float(ego_pred[0]), float(ego_pred[1])
    p1 = p2 = p3 = n_count = 0
    r_pos = r_neg = 0.0
    for sx, sy in surrounding:
        dx, dy = ex - sx, ey - sy
        d = math.hypot(dx, dy)
        kind = region(dx, dy, cfg)
        if kind == P1:
            p1 += 1
            if p1 <= 1:
                r_pos += cfg.c1 * math.tanh(abs(dx) - half)
        elif kind == NEG:
            n_count += 1
            if abs(dy) <= half:
                r_neg += cfg.c1 * math.tanh(abs(dx) - half)
            else:
                r_neg += cfg.c1 * math.tanh(d - cfg.d1)
        elif kind == P2:
            p2 += 1
            r_pos += d / cfg.c1
        else:
            p3 += 1
            r_pos += cfg.c2 / d
    p_count = p1 + p2 + p3
    # a scene with only negative-region vehicles would divide by zero
    positive = r_pos / p_count if p_count else 0.0
    r_dis = positive + cfg.k1 * r_neg
    return r_dis, {"p1": p1, "p2": p2, "p3": p3, "n_count": n_count}


def imitation_reward(ego_pred, ego_actual, cfg: RewardConfig = RewardConfig()) -> float:
    x_err = ego_pred[0] - ego_actual[0]
    y_err = ego_pred[1] - ego_actual[1]
    return cfg.imit_scale * (cfg.imit_x_weight * abs(x_err) + cfg.imit_y_weight * abs(y_err))


def offroad_reward(ego_pred_x: float, cfg: RewardConfig = RewardConfig()) -> float:
    if ego_pred_x <= 0 or ego_pred_x >= cfg.road_width:
        return cfg.k2
    return 0.0


def total_reward(ego_pred, ego_actual, surrounding, cfg: RewardConfig = RewardConfig()) -> RewardBreakdown:
    r_dis, counts = distance_reward(ego_pred, surrounding, cfg)
    return RewardBreakdown(r_dis, imitation_reward(ego_pred, ego_actual, cfg),
                           offroad_reward(ego_pred[0], cfg), **counts)


# --- scene files ------------------------------------------------------------------
# one scene per line: ego_pred_x ego_pred_y ego_actual_x ego_actual_y n x1 y1 ... xn yn

def format_scene(ego_pred, ego_actual, surrounding) -> str:
    vals = [*ego_pred, *ego_actual, len(surrounding)]
    for p in surrounding:
        vals.extend(p)
    return " ".join(repr(float(v)) if i != 4 else str(int(v)) for i, v in enumerate(vals))


def parse_scene(line: str):
    tok = line.split()
    ego_pred = (float(tok[0]), float(tok[1]))
    ego_actual = (float(tok[2]), float(tok[3]))
    n = int(tok[4])
    if len(tok) != 5 + 2 * n:
        raise ValueError(f"scene declares {n} vehicles but has {len(tok) - 5} coordinates")
    pts = np.array(tok[5:], dtype=float).reshape(n, 2)
    return ego_pred, ego_actual, [tuple(p) for p in pts]


def read_scenes(path):
    with open(path) as fh:
        return [parse_scene(line) for line in fh if line.strip() and not line.startswith("#")]


def write_scenes(path, scenes) -> None:
    with open(path, "w") as fh:
        for s in scenes:
            fh.write(format_scene(*s) + "\n")
