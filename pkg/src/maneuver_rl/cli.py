"""Command-line entry point: ``python -m maneuver_rl <command> [options]``.

Exit status: 0 on success, 1 for configuration, data or missing-dependency
errors, 2 for usage errors.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import __version__
from .config import RunConfig
from .drl import DependencyError, QNetworks, QPolicy, train_drl
from .env import DrivingEnv, RandomPolicy, RulePolicy
from .evaluation import dataset_near_collisions, evaluate_policy, write_plot_data, write_report
from .imitation import ImitationPolicy, collect_labeled_grids, train_imitation
from .mnn import MnnParams, mnn_train
from .networks import EncoderParams, ImitationHeads
from .nn import CheckpointError
from .trajectory import (ConfigError, EmptyDatasetError, SchemaError, TrackError, ingest_csv,
                         label_distribution, load_index, save_index)

COMMANDS = ("ingest", "label-stats", "train-mnn", "train-imitation", "train-drl", "evaluate", "replay-render")

COMMAND_HELP = {
    "ingest": "validate CSV recordings and cache them as .npz",
    "label-stats": "maneuver label distribution per dataset",
    "train-mnn": "fit the trajectory predictor",
    "train-imitation": "pre-train the grid encoder and decision heads",
    "train-drl": "double-Q training over the dataset curriculum",
    "evaluate": "metrics report for the rule, imitation and learned policies",
    "replay-render": "per-step trace of one episode",
}

MNN_FILE = "mnn.bin"
ENCODER_FILE = "encoder.bin"
HEADS_FILE = "imitation_heads.bin"
Q_FILE = "q_networks.bin"


class Named(NamedTuple):
    name: str
    index: object


class Run:
    """One command invocation: resolved config, output directory and manifest."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg["out_dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[Path] = []

    def path(self, name: str) -> Path:
        return self.out / name

    def wrote(self, path: Path) -> None:
        self.artifacts.append(Path(path))

    def finish(self) -> None:
        """Merge this command's artifacts into ``manifest.json`` with the config hash."""
        mpath = self.out / "manifest.json"
        manifest = json.loads(mpath.read_text()) if mpath.exists() else {"artifacts": {}}
        h = self.cfg.hash()
        for p in self.artifacts:
            manifest["artifacts"][str(p.relative_to(self.out))] = {
                "command": self.command, "config_hash": h,
                "sha256": hashlib.sha256(p.read_bytes()).hexdigest()}
        manifest["config_hash"] = h
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        (self.out / "config.txt").write_text(self.cfg.dump())

    # datasets ----------------------------------------------------------------------------
    def datasets(self, key: str):
        paths = self.cfg.paths(key)
        if not paths:
            raise ConfigError(f"{key}: no dataset path given")
        return [(p.stem, self.load(p)) for p in paths]

    def load(self, path: Path):
        if not path.is_file():
            raise ConfigError(f"dataset not found: {path}")
        if path.suffix == ".npz":
            return load_index(path)
        return ingest_csv(path, self.cfg.lane_config(), on_bad_track="skip")

    def env(self, index, name: str, predictor) -> DrivingEnv:
        c = self.cfg
        return DrivingEnv(index, predictor, c.reward(index.meta.lane_width, index.meta.n_lanes),
                          c.controls(), c.grid_spec(), c["data.sensor_range"], name)

    # checkpoints -------------------------------------------------------------------------
    def need(self, name: str) -> Path:
        p = self.path(name)
        if not p.is_file():
            raise DependencyError(f"missing checkpoint {p}; run the training command that writes it first")
        return p

    def predictor(self) -> MnnParams:
        return MnnParams.load(self.need(MNN_FILE))


# --- commands ------------------------------------------------------------------------------------

def cmd_ingest(run: Run) -> None:
    for name, index in run.datasets("data.train") + _optional(run, "data.test"):
        p = run.path(f"{name}.npz")
        save_index(index, p)
        run.wrote(p)
        print(f"{name}: {len(index.tracks)} vehicles, {index.n_samples} samples, "
              f"{index.dropped_rows} rows dropped -> {p}")


def _optional(run: Run, key: str):
    return run.datasets(key) if run.cfg.paths(key) else []


def cmd_label_stats(run: Run) -> None:
    for name, index in run.datasets("data.train") + _optional(run, "data.test"):
        p = run.path(f"label_stats_{name}.csv")
        label_distribution(index).to_csv(p)
        run.wrote(p)


def cmd_train_mnn(run: Run) -> None:
    indices = [ix for _, ix in run.datasets("data.train")]
    params, losses = mnn_train(indices, run.cfg.mnn())
    p = run.path(MNN_FILE)
    params.save(p)
    run.wrote(p)
    log = run.path("mnn_log.csv")
    _write_rows(log, ["epoch", "rmse_ft"], [[i + 1, f"{v:.6f}"] for i, v in enumerate(losses)])
    run.wrote(log)


def cmd_train_imitation(run: Run) -> None:
    pred = run.predictor()
    parts = [collect_labeled_grids(run.env(ix, name, pred), stride=run.cfg["imitation.stride"])
             for name, ix in run.datasets("data.train")]
    data = parts[0]
    for more in parts[1:]:
        data = type(data)(np.concatenate([data.grids, more.grids]), np.concatenate([data.lateral, more.lateral]),
                          np.concatenate([data.longitudinal, more.longitudinal]))
    res = train_imitation(data, run.cfg.imitation(), run.cfg.grid_spec())
    for obj, name in ((res.encoder, ENCODER_FILE), (res.heads, HEADS_FILE)):
        obj.save(run.path(name))
        run.wrote(run.path(name))
    log = run.path("imitation_log.csv")
    _write_rows(log, ["epoch", "mean_loss", "samples"],
                [[i + 1, f"{l:.6f}", n] for i, (l, n) in enumerate(zip(res.losses, res.used_per_epoch))])
    run.wrote(log)
    print(f"imitation: {len(data)} samples, {res.pruned} pruned after epoch 1")


def cmd_train_drl(run: Run) -> None:
    encoder = EncoderParams.load(run.need(ENCODER_FILE))
    pred = run.predictor()
    datasets = [Named(name, ix) for name, ix in run.datasets("data.train")]
    res = train_drl(lambda d: run.env(d.index, d.name, pred), datasets, run.cfg.drl(), encoder=encoder,
                    checkpoint_dir=run.path("drl_checkpoints"), log_path=run.path("drl_log.csv"))
    for p in res.checkpoints:
        run.wrote(p)
    run.wrote(run.path("drl_log.csv"))
    res.networks.save(run.path(Q_FILE))
    run.wrote(run.path(Q_FILE))


def _policies(run: Run) -> dict:
    encoder = EncoderParams.load(run.need(ENCODER_FILE))
    heads = ImitationHeads.load(run.need(HEADS_FILE))
    q = QNetworks.load(run.need(Q_FILE))
    return {"rule": RulePolicy(), "imitation": ImitationPolicy(encoder, heads),
            "pmp_drl": QPolicy(encoder, q.primary)}


def cmd_evaluate(run: Run) -> None:
    pred = run.predictor()
    policies = _policies(run)
    rows, baseline = [], []
    limit = run.cfg["eval.max_vehicles"] or None
    for name, ix in run.datasets("data.test"):
        env = run.env(ix, name, pred)
        vids = env.episode_vehicles()[:limit]
        for pname, pol in policies.items():
            reports, series = evaluate_policy(pol, env, pname, vids, run.cfg["workers"])
            rows.extend(reports)
            p = run.path(f"plot_{pname}_{name}.csv")
            write_plot_data(series, p, pname)
            run.wrote(p)
        baseline.extend(dataset_near_collisions(env, vids))
    for rs, fname in ((rows, "report.csv"), (baseline, "dataset_near_collisions.csv")):
        write_report(rs, run.path(fname))
        run.wrote(run.path(fname))


def cmd_replay_render(run: Run) -> None:
    pred = run.predictor()
    name, ix = run.datasets("data.test")[0]
    env = run.env(ix, name, pred)
    vid = run.cfg["render.vehicle"] or env.episode_vehicles()[0]
    which = run.cfg["render.policy"]
    if which == "rule":
        pol = RulePolicy()
    elif which == "random":
        pol = RandomPolicy(run.cfg["seed"])
    else:
        pols = _policies(run)
        if which not in pols:
            raise ConfigError(f"render.policy: unknown policy '{which}'")
        pol = pols[which]
    _, series = evaluate_policy(pol, env, which, [vid])
    trace = run.path(f"trace_{which}_{name}_{vid}.csv")
    env.write_trace(trace)
    plot = run.path(f"plot_{which}_{name}_{vid}.csv")
    write_plot_data(series, plot, which)
    run.wrote(trace)
    run.wrote(plot)


HANDLERS = {"ingest": cmd_ingest, "label-stats": cmd_label_stats, "train-mnn": cmd_train_mnn,
            "train-imitation": cmd_train_imitation, "train-drl": cmd_train_drl,
            "evaluate": cmd_evaluate, "replay-render": cmd_replay_render}


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maneuver_rl", description="Predictive maneuver planning pipeline.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")
    for c in COMMANDS:
        sp = sub.add_parser(c, help=COMMAND_HELP[c])
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--out", help="output directory (out_dir)")
        sp.add_argument("--seed", help="global seed")
        sp.add_argument("--data", help="training datasets, comma separated (data.train)")
        sp.add_argument("--test", help="test datasets, comma separated (data.test)")
    return ap


def resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    for flag, key in (("out", "out_dir"), ("seed", "seed"), ("data", "data.train"), ("test", "data.test")):
        if getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    return RunConfig.load(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        run = Run(cfg, args.command)
        HANDLERS[args.command](run)
        run.finish()
    except (ConfigError, DependencyError, CheckpointError, SchemaError, TrackError, EmptyDatasetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
