"""Memory neuron network predicting per-frame position increments of surrounding vehicles.

Each hidden unit ``j`` is paired with a memory unit holding an exponentially
weighted trace of the unit's past activations::

    m_j(t) = alpha_j * z_j(t-1) + (1 - alpha_j) * m_j(t-1)
    z(t)   = tanh(dx(t) W_x + m(t) W_m + b_h)
    out(t) = z(t) W_o + b_o

The input and output are (lateral, longitudinal) increments in feet per
frame. ``alpha`` is stored as a logit so training keeps it inside (0, 1).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import autograd as ag
from .nn import Adam, ParamSet, collect_grads, uniform_fan_in
from .trajectory import EmptyDatasetError, FrameIndex, VehicleTrack

HIDDEN = 24
HISTORY = 30
HORIZON = 30


class MnnParams(ParamSet):
    kind = "mnn"

    @property
    def hidden(self) -> int:
        return self.arrays["b_h"].shape[0]

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.arrays["alpha_logit"]))

    @classmethod
    def zeros(cls, hidden: int = HIDDEN) -> "MnnParams":
        return cls({"alpha_logit": np.zeros(hidden), "W_x": np.zeros((2, hidden)),
                    "W_m": np.zeros((hidden, hidden)), "b_h": np.zeros(hidden),
                    "W_o": np.zeros((hidden, 2)), "b_o": np.zeros(2)})

    def predict(self, histories, horizon: int = HORIZON) -> np.ndarray:
        """Batched rollout: ``(B, p, 2)`` histories -> ``(B, horizon, 2)`` positions."""
        return rollout_positions(self, histories, horizon)


def init_mnn(hidden: int = HIDDEN, seed: int = 0) -> MnnParams:
    rng = np.random.default_rng(seed)
    return MnnParams({
        "alpha_logit": rng.normal(0.0, 1.0, hidden),
        "W_x": uniform_fan_in(rng, (2, hidden), 2),
        "W_m": uniform_fan_in(rng, (hidden, hidden), hidden),
        "b_h": np.zeros(hidden),
        "W_o": uniform_fan_in(rng, (hidden, 2), hidden),
        "b_o": np.zeros(2),
    })


class MnnState(NamedTuple):
    z: np.ndarray  # previous hidden activations
    m: np.ndarray  # memory values


def initial_state(params: MnnParams, batch: int | None = None) -> MnnState:
    shape = (params.hidden,) if batch is None else (batch, params.hidden)
    return MnnState(np.zeros(shape), np.zeros(shape))


def memory_update(z_prev, m_prev, alpha):
    return alpha * z_prev + (1.0 - alpha) * m_prev


def mnn_forward(params: MnnParams, state: MnnState, increment) -> tuple[np.ndarray, MnnState]:
    """One recurrent step: increment (..., 2) -> predicted next increment (..., 2)."""
    increment = np.asarray(increment, dtype=float)
    h = params.hidden
    if increment.shape[-1] != 2 or state.z.shape[-1] != h or state.m.shape[-1] != h:
        raise ag.ShapeError("state or increment does not match the network dimensions")
    if state.z.shape[:-1] != increment.shape[:-1]:
        raise ag.ShapeError("batch shape of state and increment differ")
    a = params.arrays
    m = memory_update(state.z, state.m, params.alpha)
    z = np.tanh(increment @ a["W_x"] + m @ a["W_m"] + a["b_h"])
    return z @ a["W_o"] + a["b_o"], MnnState(z, m)


def _forward_t(t: dict, alpha: ag.Tensor, z_prev, m_prev, x):
    m = alpha * z_prev + (1.0 - alpha) * m_prev
    z = ag.tanh(ag.matmul(x, t["W_x"]) + ag.matmul(m, t["W_m"]) + t["b_h"])
    return ag.matmul(z, t["W_o"]) + t["b_o"], z, m


class InsufficientHistoryError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionResult:
    positions: np.ndarray  # (T, 2) predicted (x, y), feet

    @property
    def horizon(self) -> int:
        return len(self.positions)


def rollout_positions(params: MnnParams, histories, horizon: int) -> np.ndarray:
    hist = np.asarray(histories, dtype=float)
    if hist.ndim != 3 or hist.shape[2] != 2:
        raise ag.ShapeError("histories must have shape (batch, p, 2)")
    if hist.shape[1] < 2:
        raise InsufficientHistoryError("need at least 2 past positions")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    inc = np.diff(hist, axis=1)
    state = initial_state(params, hist.shape[0])
    out = None
    for k in range(inc.shape[1]):
        out, state = mnn_forward(params, state, inc[:, k])
    pos = hist[:, -1].copy()
    result = np.empty((hist.shape[0], horizon, 2))
    for k in range(horizon):
        pos = pos + out
        result[:, k] = pos
        if k + 1 < horizon:
            out, state = mnn_forward(params, state, out)
    return result


def mnn_rollout(params: MnnParams, history, horizon: int = HORIZON) -> PredictionResult:
    """Warm up on the history's increments, then feed predictions back for ``horizon`` steps."""
    history = np.asarray(history, dtype=float)
    if history.ndim != 2 or history.shape[1] != 2:
        raise ag.ShapeError("history must have shape (p, 2)")
    return PredictionResult(rollout_positions(params, history[None], horizon)[0])


def predict_many(params, histories: Sequence[np.ndarray], horizon: int = HORIZON) -> list[np.ndarray]:
    """Roll out histories of possibly different lengths, batching equal lengths together."""
    out: list = [None] * len(histories)
    by_len: dict[int, list[int]] = {}
    for i, h in enumerate(histories):
        by_len.setdefault(len(h), []).append(i)
    for _, idx in by_len.items():
        pred = params.predict(np.stack([histories[i] for i in idx]), horizon)
        for j, i in enumerate(idx):
            out[i] = pred[j]
    return out


# --- training -----------------------------------------------------------------------

@dataclass
class MnnConfig:
    hidden: int = HIDDEN
    history: int = HISTORY
    epochs: int = 50
    lr: float = 5e-3
    lr_decay: float = 0.95  # per epoch
    batch: int = 64
    stride: int = 5
    max_windows: int | None = 20000
    seed: int = 0


def make_windows(tracks: Sequence[VehicleTrack], length: int, stride: int = 1) -> np.ndarray:
    """Position windows ``(N, length, 2)`` cut from each track."""
    out = []
    for t in tracks:
        pos = t.positions()
        for s in range(0, len(pos) - length + 1, stride):
            out.append(pos[s:s + length])
    if not out:
        return np.empty((0, length, 2))
    return np.stack(out)


def rmse_loss(tensors: dict, increments: np.ndarray) -> ag.Tensor:
    """One-step-ahead RMSE with teacher forcing over ``(N, p, 2)`` increment windows."""
    n, p, _ = increments.shape
    hidden = tensors["b_h"].shape[0]
    alpha = ag.sigmoid(tensors["alpha_logit"])
    z = ag.Tensor(np.zeros((n, hidden)))
    m = ag.Tensor(np.zeros((n, hidden)))
    sq = None
    for k in range(p - 1):
        out, z, m = _forward_t(tensors, alpha, z, m, ag.Tensor(increments[:, k]))
        err = out - increments[:, k + 1]
        e2 = (err * err).sum()
        sq = e2 if sq is None else sq + e2
    return ag.sqrt(sq * (1.0 / (n * (p - 1) * 2)))


def one_step_rmse(params: MnnParams, increments: np.ndarray) -> float:
    return float(rmse_loss(params.tensors(requires_grad=False), increments).data)


def _training_tracks(dataset) -> list[VehicleTrack]:
    if isinstance(dataset, FrameIndex):
        return list(dataset.tracks.values())
    if isinstance(dataset, VehicleTrack):
        return [dataset]
    tracks = []
    for d in dataset:
        tracks.extend(_training_tracks(d))
    return tracks


def mnn_train(dataset, config: MnnConfig = MnnConfig()) -> tuple[MnnParams, list[float]]:
    """Fit increments by Adam on teacher-forced one-step RMSE.

    ``dataset`` may be a FrameIndex, a track, or a list of either. Returns the
    parameters and the full-data loss after each epoch.
    """
    rng = np.random.default_rng(config.seed)
    windows = make_windows(_training_tracks(dataset), config.history + 1, config.stride)
    if len(windows) == 0:
        raise EmptyDatasetError(f"no track has {config.history + 1} frames")
    if config.max_windows is not None and len(windows) > config.max_windows:
        windows = windows[rng.choice(len(windows), config.max_windows, replace=False)]
    inc = np.diff(windows, axis=1)
    params = init_mnn(config.hidden, config.seed)
    opt = Adam(params, lr=config.lr)
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(len(inc))
        for s in range(0, len(order), config.batch):
            batch = inc[order[s:s + config.batch]]
            t = params.tensors()
            rmse_loss(t, batch).backward()
            opt.step(collect_grads(t))
        losses.append(one_step_rmse(params, inc))
        opt.lr *= config.lr_decay
    return params, losses
