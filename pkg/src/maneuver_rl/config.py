"""Flat dotted-key run configuration: defaults < config file < command-line overrides."""
from __future__ import annotations

import configparser
import hashlib
from pathlib import Path
from typing import Any, Mapping

from .drl import DrlConfig
from .dynamics import ControlTable
from .grid import GridSpec
from .imitation import ImitationConfig
from .mnn import MnnConfig
from .reward import RewardConfig
from .trajectory import ConfigError, LaneConfig

# Every key the pipeline understands. The type of the default decides how a
# value from a file or flag is parsed.
DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "out_dir": "runs",
    "workers": 1,
    # datasets: comma-separated CSV paths, training ones in curriculum order
    "data.train": "",
    "data.test": "",
    "data.n_lanes": 0,  # 0: infer from the data
    "data.lane_width": 12.0,
    "data.frame_rate": 10.0,
    "data.sensor_range": 90.0,
    # grid
    "grid.rows": 13,
    "grid.cols": 3,
    "grid.past": 30,
    "grid.future": 30,
    "grid.cell_length": 15.0,
    # controls
    "dv.accelerate": 0.5,
    "dv.cruise": 0.0,
    "dv.decelerate": -0.5,
    "dv.brake": -1.5,
    "dphi.hard": 0.04,
    "dphi.soft": 0.01,
    # reward
    "reward.c1": 5.0,
    "reward.c2": 125.0,
    "reward.k1": 2.0,
    "reward.k2": -6.0,
    "reward.l": 15.0,
    "reward.d1": 16.0,
    "reward.d2": 25.0,
    # predictor
    "mnn.hidden": 24,
    "mnn.history": 30,
    "mnn.epochs": 50,
    "mnn.lr": 5e-3,
    "mnn.lr_decay": 0.95,
    "mnn.batch": 64,
    "mnn.stride": 5,
    "mnn.max_windows": 20000,
    # imitation
    "imitation.epochs": 20,
    "imitation.batch": 32,
    "imitation.lr": 1e-3,
    "imitation.cruise_every": 5,  # keep 1 in 5 cruise samples (20%)
    "imitation.stride": 5,  # frames between collected grids
    "imitation.prune": True,
    # reinforcement learning
    "drl.gamma": 0.99,
    "drl.eps_start": 1.0,
    "drl.eps_end": 0.05,
    "drl.eps_fraction": 0.5,
    "drl.batch": 32,
    "drl.capacity": 100_000,
    "drl.target_sync": 1000,
    "drl.lr": 1e-4,
    "drl.clip_norm": 10.0,
    "drl.huber_delta": 1.0,
    "drl.reward_scale": 1.0,
    "drl.updates_per_step": 1.0,
    "drl.episodes_per_dataset": 0,  # 0: one episode per eligible vehicle
    "drl.cruise_every": 2,  # store 1 in 2 cruise transitions (50%)
    "drl.joint_head": False,
    "drl.double_q_rule": "as_written",
    "drl.log_every": 500,
    # evaluation / render
    "eval.max_vehicles": 0,  # 0: every eligible vehicle
    "render.vehicle": 0,  # 0: first eligible vehicle
    "render.policy": "rule",
}


def _parse(key: str, raw) -> Any:
    default = DEFAULTS[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return text


class RunConfig:
    """Resolved configuration with typed views for each pipeline stage."""

    def __init__(self, values: Mapping[str, Any] | None = None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        key = key.strip().lower()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key '{key}'")
        self.values[key] = _parse(key, value)

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def load(cls, path=None, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            cfg.update_from_file(path)
        for k, v in (overrides or {}).items():
            cfg.set(k, v)
        return cfg

    def update_from_file(self, path) -> None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#",))
        try:
            parser.read_string("[run]\n" + path.read_text(), source=str(path))
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from None
        for k, v in parser["run"].items():
            try:
                self.set(k, v)
            except ConfigError as e:
                raise ConfigError(f"{path}: {e}") from None

    def dump(self) -> str:
        return "".join(f"{k} = {_fmt(self.values[k])}\n" for k in sorted(self.values))

    def hash(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()[:16]

    # typed views -------------------------------------------------------------------------
    def paths(self, key: str) -> list[Path]:
        return [Path(p.strip()) for p in str(self.values[key]).split(",") if p.strip()]

    @property
    def dt(self) -> float:
        return 1.0 / self["data.frame_rate"]

    @property
    def horizon(self) -> int:
        return self["grid.future"]

    def lane_config(self) -> LaneConfig:
        n = self["data.n_lanes"] or None
        return LaneConfig(n, self["data.lane_width"], self["data.frame_rate"])

    def grid_spec(self) -> GridSpec:
        try:
            return GridSpec(self["grid.rows"], self["grid.cols"], self["grid.past"], self["grid.future"],
                            self["grid.cell_length"])
        except ValueError as e:
            raise ConfigError(f"grid: {e}") from None

    def controls(self) -> ControlTable:
        return ControlTable.from_mapping({k: v for k, v in self.values.items()
                                          if k.startswith(("dv.", "dphi."))})

    def reward(self, lane_width: float, n_lanes: int) -> RewardConfig:
        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("reward.")}
        try:
            return RewardConfig(lane_width=lane_width, n_lanes=n_lanes, **kw)
        except ValueError as e:
            raise ConfigError(f"reward: {e}") from None

    def mnn(self) -> MnnConfig:
        v = self.values
        return MnnConfig(v["mnn.hidden"], v["mnn.history"], v["mnn.epochs"], v["mnn.lr"], v["mnn.lr_decay"],
                         v["mnn.batch"], v["mnn.stride"], v["mnn.max_windows"] or None, v["seed"])

    def imitation(self) -> ImitationConfig:
        v = self.values
        return ImitationConfig(v["imitation.epochs"], v["imitation.batch"], v["imitation.lr"],
                               v["imitation.cruise_every"], v["imitation.prune"], v["seed"])

    def drl(self) -> DrlConfig:
        v = self.values
        return DrlConfig(gamma=v["drl.gamma"], eps_start=v["drl.eps_start"], eps_end=v["drl.eps_end"],
                         eps_fraction=v["drl.eps_fraction"], batch=v["drl.batch"], capacity=v["drl.capacity"],
                         target_sync=v["drl.target_sync"], lr=v["drl.lr"], clip_norm=v["drl.clip_norm"],
                         huber_delta=v["drl.huber_delta"], reward_scale=v["drl.reward_scale"],
                         updates_per_step=v["drl.updates_per_step"],
                         episodes_per_dataset=v["drl.episodes_per_dataset"] or None,
                         cruise_every=v["drl.cruise_every"], joint_head=v["drl.joint_head"],
                         double_q_rule=v["drl.double_q_rule"], log_every=v["drl.log_every"], seed=v["seed"])


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)
