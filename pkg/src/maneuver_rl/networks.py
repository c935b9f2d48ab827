"""CNN state encoder, imitation decision heads and Q networks."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .grid import DEFAULT_SPEC, GridSpec
from .maneuvers import N_JOINT, N_LATERAL, N_LONGITUDINAL
from .nn import ParamSet, uniform_fan_in

ENCODING = 256
RELU_GAIN = np.sqrt(6.0)


class EncoderParams(ParamSet):
    """3x3 conv (same padding) -> 3x1 conv -> 2x1 max pool -> dense encoding."""

    kind = "encoder"

    @property
    def encoding_size(self) -> int:
        return self.arrays["b_fc"].shape[0]


def _pooled_size(spec: GridSpec, filters2: int) -> int:
    return ((spec.rows - 2) // 2) * spec.cols * filters2


def init_encoder(spec: GridSpec = DEFAULT_SPEC, filters1: int = 32, filters2: int = 64,
                 encoding: int = ENCODING, seed: int = 0) -> EncoderParams:
    rng = np.random.default_rng(seed)
    c = spec.channels
    flat = _pooled_size(spec, filters2)
    return EncoderParams({
        "W_c1": uniform_fan_in(rng, (3, 3, c, filters1), 9 * c, RELU_GAIN),
        "b_c1": np.zeros(filters1),
        "W_c2": uniform_fan_in(rng, (3, 1, filters1, filters2), 3 * filters1, RELU_GAIN),
        "b_c2": np.zeros(filters2),
        "W_fc": uniform_fan_in(rng, (flat, encoding), flat, RELU_GAIN),
        "b_fc": np.zeros(encoding),
    })


def encoder_forward_t(t: dict, grids) -> Tensor:
    """(B, rows, cols, channels) grids -> (B, encoding)."""
    grids = ag._wrap(grids)
    c = t["W_c1"].shape[2]
    if grids.ndim != 4 or grids.shape[3] != c:
        raise ag.ShapeError(f"expected grids (B, rows, cols, {c}), got {grids.shape}")
    h = ag.relu(ag.conv2d(grids, t["W_c1"], t["b_c1"], padding=(1, 1)))
    h = ag.relu(ag.conv2d(h, t["W_c2"], t["b_c2"]))
    h = ag.maxpool2d(h, (2, 1))
    h = h.reshape(h.shape[0], -1)
    if h.shape[1] != t["W_fc"].shape[0]:
        raise ag.ShapeError(f"grid shape {grids.shape[1:]} does not match the encoder")
    return ag.relu(ag.matmul(h, t["W_fc"]) + t["b_fc"])


def encoder_forward(params: EncoderParams, grid) -> np.ndarray:
    """Encode one grid ``(rows, cols, channels)`` or a batch of them."""
    g = np.asarray(grid, dtype=float)
    single = g.ndim == 3
    if single:
        g = g[None]
    out = encoder_forward_t(params.tensors(requires_grad=False), g).data
    return out[0] if single else out


# --- imitation heads --------------------------------------------------------------------

class ImitationHeads(ParamSet):
    kind = "imitation_heads"


def init_heads(encoding: int = ENCODING, hidden: int = 64, seed: int = 1) -> ImitationHeads:
    rng = np.random.default_rng(seed)
    return ImitationHeads({
        "lat_W1": uniform_fan_in(rng, (encoding, hidden), encoding, RELU_GAIN), "lat_b1": np.zeros(hidden),
        "lat_W2": uniform_fan_in(rng, (hidden, N_LATERAL), hidden), "lat_b2": np.zeros(N_LATERAL),
        "lon_W1": uniform_fan_in(rng, (encoding, hidden), encoding, RELU_GAIN), "lon_b1": np.zeros(hidden),
        "lon_W2": uniform_fan_in(rng, (hidden, N_LONGITUDINAL), hidden), "lon_b2": np.zeros(N_LONGITUDINAL),
    })


def heads_forward_t(t: dict, enc: Tensor) -> tuple[Tensor, Tensor]:
    """Class probabilities (lateral (B,5), longitudinal (B,4))."""
    out = []
    for p in ("lat", "lon"):
        h = ag.relu(ag.matmul(enc, t[f"{p}_W1"]) + t[f"{p}_b1"])
        out.append(ag.softmax(ag.matmul(h, t[f"{p}_W2"]) + t[f"{p}_b2"]))
    return out[0], out[1]


# --- Q networks ----------------------------------------------------------------------------

class QNetwork(ParamSet):
    """Three dense layers; the last one is split into one linear head per decision axis."""

    kind = "q_network"

    @property
    def heads(self) -> tuple[str, ...]:
        return tuple(k[2:] for k in self.arrays if k.startswith("W_") and k not in ("W_1", "W_2"))


def init_q(encoding: int = ENCODING, hidden=(128, 64), joint: bool = False, seed: int = 2) -> QNetwork:
    rng = np.random.default_rng(seed)
    h1, h2 = hidden
    arrays = {"W_1": uniform_fan_in(rng, (encoding, h1), encoding, RELU_GAIN), "b_1": np.zeros(h1),
              "W_2": uniform_fan_in(rng, (h1, h2), h1, RELU_GAIN), "b_2": np.zeros(h2)}
    sizes = {"joint": N_JOINT} if joint else {"lat": N_LATERAL, "lon": N_LONGITUDINAL}
    for name, n in sizes.items():
        arrays[f"W_{name}"] = uniform_fan_in(rng, (h2, n), h2)
        arrays[f"b_{name}"] = np.zeros(n)
    return QNetwork(arrays)


def q_forward_t(t: dict, enc) -> dict[str, Tensor]:
    enc = ag._wrap(enc)
    h = ag.relu(ag.matmul(enc, t["W_1"]) + t["b_1"])
    h = ag.relu(ag.matmul(h, t["W_2"]) + t["b_2"])
    names = [k[2:] for k in t if k.startswith("W_") and k not in ("W_1", "W_2")]
    return {n: ag.matmul(h, t[f"W_{n}"]) + t[f"b_{n}"] for n in names}


def q_values(q: QNetwork, enc) -> dict[str, np.ndarray]:
    return {k: v.data for k, v in q_forward_t(q.tensors(requires_grad=False), np.asarray(enc)).items()}


# --- losses ---------------------------------------------------------------------------------

BCE_EPS = 1e-7


def bce_loss(pred, target) -> Tensor:
    """Mean binary cross entropy over every element; predictions are clamped to [eps, 1-eps]."""
    pred = ag._wrap(pred)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ag.ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    p = ag.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    ll = ag.log(p) * target + ag.log(1.0 - p) * (1.0 - target)
    return -ll.mean()


def huber_loss(pred, target, delta: float = 1.0) -> Tensor:
    pred = ag._wrap(pred)
    return ag.huber(pred - np.asarray(target, dtype=float), delta).mean()


def one_hot(labels, n: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), n))
    out[np.arange(len(labels)), labels] = 1.0
    return out
