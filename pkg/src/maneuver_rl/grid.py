"""Context-aware occupancy grid: past binary occupancy plus future probabilistic occupancy."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    rows: int = 13
    cols: int = 3
    past: int = 30
    future: int = 30
    cell_length: float = 15.0  # ft

    def __post_init__(self):
        if self.rows % 2 == 0 or self.cols % 2 == 0:
            raise ValueError("grid rows and cols must be odd")

    @property
    def channels(self) -> int:
        return self.past + self.future

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.rows, self.cols, self.channels)

    @property
    def ego_row(self) -> int:
        return self.rows // 2

    @property
    def ego_col(self) -> int:
        return self.cols // 2


DEFAULT_SPEC = GridSpec()


def occupancy_probability(t: float) -> float:
    """Occupancy probability of the predicted cell ``t`` frames ahead (0 <= t <= 30)."""
    if not 0 <= t <= 30:
        raise ValueError(f"time index {t} outside [0, 30]")
    return 0.47 + math.sqrt(0.236 - 0.004 * t)


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


def cell_coords(dy: float, lane_offset: int, spec: GridSpec = DEFAULT_SPEC) -> tuple[int, int]:
    """Unbounded (row, col) for a longitudinal offset and a lane offset; ahead = lower row."""
    return spec.ego_row - _round(dy / spec.cell_length), int(lane_offset) + spec.ego_col


def in_bounds(row: int, col: int, spec: GridSpec = DEFAULT_SPEC) -> bool:
    return 0 <= row < spec.rows and 0 <= col < spec.cols


def cell_index(ego_y: float, ego_lane: int, other_y: float, other_lane: int,
               spec: GridSpec = DEFAULT_SPEC) -> tuple[int, int] | None:
    """Grid cell of another vehicle relative to the ego, or None outside the region."""
    if abs(other_lane - ego_lane) > spec.cols // 2:
        return None
    rc = cell_coords(other_y - ego_y, other_lane - ego_lane, spec)
    return rc if in_bounds(*rc, spec) else None


def pom_deposit(row: int, col: int, horizon: int, spec: GridSpec = DEFAULT_SPEC):
    """In-bounds (row, col, value) triples of one vehicle's predicted-occupancy stamp."""
    p = occupancy_probability(horizon)
    side = (1.0 - p) / 8.0
    out = []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            r, c = row + dr, col + dc
            if in_bounds(r, c, spec):
                out.append((r, c, p if dr == dc == 0 else side))
    return out


class GridInputError(ValueError):
    pass


def build_grid(ego_history: np.ndarray, neighbor_histories: Mapping[int, np.ndarray],
               predictions: Mapping[int, np.ndarray], spec: GridSpec = DEFAULT_SPEC,
               lane_width: float = 12.0) -> np.ndarray:
    """Stack past occupancy and predicted occupancy around the ego.

    ego_history
        ``(past, 3)`` rows of ``(x, y, lane)`` for frames ``t-past+1 .. t``.
    neighbor_histories
        vehicle id -> ``(past, 3)`` rows aligned with ``ego_history``; NaN rows
        mark frames where that vehicle was not recorded.
    predictions
        vehicle id -> ``(future, 2)`` predicted ``(x, y)`` for horizons 1..future.
        Required for every neighbor present at ``t``.

    Past channel ``c`` holds frame ``t-past+1+c`` relative to the ego at that
    frame. Future channel ``past+k-1`` holds horizon ``k`` relative to the ego
    at ``t``; a predicted vehicle's lane is its current lane shifted by its
    predicted lateral displacement in whole lanes. Overlaps keep the maximum.
    """
    ego_history = np.asarray(ego_history, dtype=float)
    if ego_history.shape != (spec.past, 3):
        raise GridInputError(f"ego history must have shape ({spec.past}, 3)")
    grid = np.zeros(spec.shape)
    ego_x, ego_y, ego_lane = ego_history[-1]
    for vid in sorted(neighbor_histories):
        hist = np.asarray(neighbor_histories[vid], dtype=float)
        if hist.shape != (spec.past, 3):
            raise GridInputError(f"history of vehicle {vid} must have shape ({spec.past}, 3)")
        for c in range(spec.past):
            if np.isnan(hist[c, 1]):
                continue
            rc = cell_index(ego_history[c, 1], int(ego_history[c, 2]), hist[c, 1], int(hist[c, 2]), spec)
            if rc is not None:
                grid[rc[0], rc[1], c] = 1.0

        if np.isnan(hist[-1, 1]):
            continue
        if vid not in predictions:
            raise GridInputError(f"missing prediction for vehicle {vid}")
        pred = np.asarray(predictions[vid], dtype=float)
        if pred.shape[0] < spec.future:
            raise GridInputError(f"prediction for vehicle {vid} covers {pred.shape[0]} < {spec.future} steps")
        x_now, lane_now = hist[-1, 0], int(hist[-1, 2])
        for k in range(1, spec.future + 1):
            px, py = pred[k - 1]
            lane = lane_now + _round((px - x_now) / lane_width)
            row, col = cell_coords(py - ego_y, lane - int(ego_lane), spec)
            ch = spec.past + k - 1
            for r, cc, val in pom_deposit(row, col, k, spec):
                if val > grid[r, cc, ch]:
                    grid[r, cc, ch] = val
    return grid


def dump_grid(grid: np.ndarray, path) -> None:
    """Text dump: one block per channel, rows written top to bottom."""
    with open(path, "w") as fh:
        for ch in range(grid.shape[2]):
            fh.write(f"# channel {ch}\n")
            for r in range(grid.shape[0]):
                fh.write(" ".join(f"{v:.9f}" for v in grid[r, :, ch]) + "\n")


def load_grid(path) -> np.ndarray:
    blocks, cur = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                if cur:
                    blocks.append(cur)
                cur = []
            elif line.strip():
                cur.append([float(v) for v in line.split()])
    if cur:
        blocks.append(cur)
    return np.stack([np.array(b) for b in blocks], axis=2)
