"""Imitation pre-training of the encoder and decision heads with data pruning."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .grid import DEFAULT_SPEC, GridSpec
from .maneuvers import Lateral, Longitudinal, Maneuver, N_LATERAL, N_LONGITUDINAL
from .networks import (EncoderParams, ImitationHeads, bce_loss, encoder_forward_t,
                       heads_forward_t, init_encoder, init_heads, one_hot)
from .nn import Adam, ParamSet, collect_grads
from .trajectory import EmptyDatasetError


class DegenerateDataError(ValueError):
    pass


@dataclass
class LabeledGrids:
    grids: np.ndarray  # (N, rows, cols, channels)
    lateral: np.ndarray  # (N,) Lateral codes
    longitudinal: np.ndarray  # (N,) Longitudinal codes

    def __post_init__(self):
        self.grids = np.asarray(self.grids, dtype=float)
        self.lateral = np.asarray(self.lateral, dtype=np.int64)
        self.longitudinal = np.asarray(self.longitudinal, dtype=np.int64)
        if not len(self.grids) == len(self.lateral) == len(self.longitudinal):
            raise ValueError("grids and labels differ in length")

    def __len__(self) -> int:
        return len(self.grids)

    def subset(self, idx) -> "LabeledGrids":
        return LabeledGrids(self.grids[idx], self.lateral[idx], self.longitudinal[idx])

    def split(self, fraction: float, seed: int = 0):
        order = np.random.default_rng(seed).permutation(len(self))
        k = int(round(fraction * len(self)))
        return self.subset(np.sort(order[:k])), self.subset(np.sort(order[k:]))


class _Model:
    """Encoder + heads viewed as one parameter set for the optimiser."""

    def __init__(self, encoder: EncoderParams, heads: ImitationHeads):
        self.encoder, self.heads = encoder, heads
        arrays = {f"enc.{k}": v for k, v in encoder.arrays.items()}
        arrays.update({f"head.{k}": v for k, v in heads.arrays.items()})
        self.joint = ParamSet.__new__(ParamSet)
        self.joint.arrays = arrays  # shares the underlying arrays

    def forward(self, tensors, grids):
        enc = encoder_forward_t({k[4:]: v for k, v in tensors.items() if k.startswith("enc.")}, grids)
        return heads_forward_t({k[5:]: v for k, v in tensors.items() if k.startswith("head.")}, enc)


def predict_proba(encoder: EncoderParams, heads: ImitationHeads, grids, batch: int = 256):
    grids = np.asarray(grids, dtype=float)
    lat, lon = [], []
    model = _Model(encoder, heads)
    t = model.joint.tensors(requires_grad=False)
    for s in range(0, len(grids), batch):
        a, b = model.forward(t, grids[s:s + batch])
        lat.append(a.data)
        lon.append(b.data)
    if not lat:
        return np.empty((0, N_LATERAL)), np.empty((0, N_LONGITUDINAL))
    return np.concatenate(lat), np.concatenate(lon)


def predict_labels(encoder, heads, grids) -> tuple[np.ndarray, np.ndarray]:
    lat, lon = predict_proba(encoder, heads, grids)
    return lat.argmax(axis=1), lon.argmax(axis=1)


def accuracy(encoder, heads, data: LabeledGrids) -> float:
    """Fraction of samples with both decision heads correct."""
    lat, lon = predict_labels(encoder, heads, data.grids)
    return float(np.mean((lat == data.lateral) & (lon == data.longitudinal)))


def prune_dataset(model, data: LabeledGrids) -> LabeledGrids:
    """Drop samples the model already classifies correctly on both heads.

    ``model`` is an ``(encoder, heads)`` pair or any callable mapping grids to
    ``(lateral codes, longitudinal codes)``.
    """
    if len(data) == 0:
        raise EmptyDatasetError("nothing to prune")
    if callable(model):
        lat, lon = model(data.grids)
    else:
        lat, lon = predict_labels(*model, data.grids)
    keep = ~((np.asarray(lat) == data.lateral) & (np.asarray(lon) == data.longitudinal))
    return data.subset(np.flatnonzero(keep))


class CruiseSubsampler:
    """Keeps one cruise-labelled sample in ``every``; other labels always pass."""

    def __init__(self, every: int = 5):
        self.every = every
        self.k_cruise = 0

    def keep(self, longitudinal: int) -> bool:
        if int(longitudinal) != Longitudinal.CRUISE:
            return True
        keep = self.k_cruise % self.every == 0
        self.k_cruise += 1
        return keep


@dataclass
class ImitationConfig:
    epochs: int = 20
    batch: int = 32
    lr: float = 1e-3
    cruise_every: int = 5
    prune: bool = True
    seed: int = 0
    filters1: int = 32
    filters2: int = 64
    encoding: int = 256
    head_hidden: int = 64


@dataclass
class ImitationResult:
    encoder: EncoderParams
    heads: ImitationHeads
    losses: list[float] = field(default_factory=list)  # mean batch loss per epoch
    pruned: int = 0
    used_per_epoch: list[int] = field(default_factory=list)


def _train_batch(model: _Model, opt: Adam, grids, lat, lon) -> tuple[float, np.ndarray]:
    t = model.joint.tensors()
    p_lat, p_lon = model.forward(t, grids)
    loss = bce_loss(p_lat, one_hot(lat, N_LATERAL)) + bce_loss(p_lon, one_hot(lon, N_LONGITUDINAL))
    loss.backward()
    opt.step(collect_grads(t))
    correct = (p_lat.data.argmax(1) == lat) & (p_lon.data.argmax(1) == lon)
    return float(loss.data), correct


def train_imitation(data: LabeledGrids, config: ImitationConfig = ImitationConfig(),
                    spec: GridSpec = DEFAULT_SPEC) -> ImitationResult:
    """Epoch 1 on all data, prune what it already gets right, then train on the rest.

    After pruning only every ``cruise_every``-th cruise-labelled sample is used;
    the counter runs across epochs so successive epochs see different cruise
    samples.
    """
    if len(data) == 0:
        raise EmptyDatasetError("empty imitation dataset")
    rng = np.random.default_rng(config.seed)
    encoder = init_encoder(spec, config.filters1, config.filters2, config.encoding, config.seed)
    heads = init_heads(config.encoding, config.head_hidden, config.seed + 1)
    model = _Model(encoder, heads)
    opt = Adam(model.joint, lr=config.lr)
    result = ImitationResult(encoder, heads)

    order = rng.permutation(len(data))
    correct = np.zeros(len(data), bool)
    losses = []
    for s in range(0, len(order), config.batch):
        idx = order[s:s + config.batch]
        loss, ok = _train_batch(model, opt, data.grids[idx], data.lateral[idx], data.longitudinal[idx])
        correct[idx] = ok
        losses.append(loss)
    result.losses.append(float(np.mean(losses)))
    result.used_per_epoch.append(len(data))

    remaining = data.subset(np.flatnonzero(~correct)) if config.prune else data
    result.pruned = len(data) - len(remaining)
    if len(remaining) == 0:
        raise DegenerateDataError("every sample was pruned after the first epoch")

    sampler = CruiseSubsampler(config.cruise_every)
    for _ in range(config.epochs - 1):
        order = rng.permutation(len(remaining))
        used = np.array([i for i in order if sampler.keep(remaining.longitudinal[i])], dtype=np.int64)
        losses = []
        for s in range(0, len(used), config.batch):
            idx = used[s:s + config.batch]
            loss, _ = _train_batch(model, opt, remaining.grids[idx], remaining.lateral[idx],
                                   remaining.longitudinal[idx])
            losses.append(loss)
        result.losses.append(float(np.mean(losses)) if losses else float("nan"))
        result.used_per_epoch.append(len(used))
    return result


class ImitationPolicy:
    name = "imitation"

    def __init__(self, encoder: EncoderParams, heads: ImitationHeads):
        self.encoder, self.heads = encoder, heads

    def __call__(self, obs, env=None) -> Maneuver:
        lat, lon = predict_labels(self.encoder, self.heads, np.asarray(obs)[None])
        return Maneuver(Lateral(int(lat[0])), Longitudinal(int(lon[0])))


def collect_labeled_grids(env, vehicles=None, stride: int = 5) -> LabeledGrids:
    """Grids along the recorded trajectories paired with the human labels.

    Frames whose lateral label is undefined (too close to the track ends) are
    skipped.
    """
    grids, lat, lon = [], [], []
    for vid in (env.episode_vehicles() if vehicles is None else vehicles):
        start, end = env.episode_bounds(vid)
        for frame in range(start, end, stride):
            obs = env.recorded_observation(vid, frame)
            label = env.human_label(frame)
            if label is None:
                continue
            grids.append(obs)
            lat.append(int(label.lateral))
            lon.append(int(label.longitudinal))
    if not grids:
        raise EmptyDatasetError("no labelable frame in the dataset")
    return LabeledGrids(np.stack(grids), lat, lon)
