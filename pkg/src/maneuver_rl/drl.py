"""Double-Q training of the decision heads on top of a frozen state encoder."""
from __future__ import annotations

import csv
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import autograd as ag
from .maneuvers import Lateral, Longitudinal, Maneuver, N_LATERAL, N_LONGITUDINAL
from .networks import EncoderParams, QNetwork, encoder_forward, huber_loss, init_q, q_forward_t, q_values
from .nn import Adam, CheckpointError, collect_grads, load_arrays, save_arrays


class DependencyError(RuntimeError):
    pass


class Transition(NamedTuple):
    state: np.ndarray  # encoding of s_t
    action: Maneuver
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """FIFO ring buffer; pushes and samples are serialised by a lock."""

    def __init__(self, capacity: int = 100_000, cruise_every: int = 2):
        self.capacity = capacity
        self.cruise_every = cruise_every
        self.k_cruise = 0
        self._items: deque = deque(maxlen=capacity)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._items)

    def items(self) -> list:
        with self._lock:
            return list(self._items)

    def push(self, transition, rule_label=None) -> bool:
        """Store a transition; cruise-labelled ones only on every ``cruise_every``-th occurrence."""
        with self._lock:
            lon = None if rule_label is None else Maneuver.of(*rule_label).longitudinal
            if lon == Longitudinal.CRUISE:
                self.k_cruise += 1
                if self.k_cruise % self.cruise_every != 0:
                    return False
            self._items.append(transition)
            return True

    def sample(self, batch: int, rng: np.random.Generator) -> list:
        with self._lock:
            idx = rng.integers(0, len(self._items), size=batch)
            return [self._items[i] for i in idx]


def replay_push(buffer: ReplayBuffer, transition, rule_label) -> bool:
    return buffer.push(transition, rule_label)


# --- targets ---------------------------------------------------------------------------------

def head_actions(action: Maneuver, heads: Sequence[str]) -> dict[str, int]:
    out = {}
    for h in heads:
        if h == "lat":
            out[h] = int(action.lateral)
        elif h == "lon":
            out[h] = int(action.longitudinal)
        else:
            out[h] = action.index
    return out


def ddqn_target_values(reward, q_next_primary: dict, q_next_target: dict, gamma: float,
                       done=False, rule: str = "as_written") -> dict[str, np.ndarray]:
    """Bootstrapped target per head.

    ``as_written``: pick the next action with the target net, evaluate it with
    the primary net. ``conventional``: pick with primary, evaluate with target.
    """
    r = np.asarray(reward, dtype=float)
    live = 1.0 - np.asarray(done, dtype=float)
    out = {}
    for h in q_next_primary:
        qp, qt = np.atleast_2d(q_next_primary[h]), np.atleast_2d(q_next_target[h])
        if rule == "as_written":
            a = qt.argmax(axis=1)
            boot = qp[np.arange(len(a)), a]
        elif rule == "conventional":
            a = qp.argmax(axis=1)
            boot = qt[np.arange(len(a)), a]
        else:
            raise ValueError(f"unknown double-Q rule {rule!r}")
        if np.ndim(r) == 0:
            boot = boot[0]
        out[h] = r + gamma * live * boot
    return out


def ddqn_target(reward, s_next, primary: QNetwork, target: QNetwork, gamma: float,
                done=False, rule: str = "as_written") -> dict[str, np.ndarray]:
    s_next = np.atleast_2d(s_next)
    return ddqn_target_values(reward, q_values(primary, s_next), q_values(target, s_next), gamma, done, rule)


@dataclass
class QNetworks:
    primary: QNetwork
    target: QNetwork

    def sync(self) -> None:
        for k, v in self.primary.arrays.items():
            self.target.arrays[k][...] = v

    def save(self, path) -> None:
        arrays = {f"primary.{k}": v for k, v in self.primary.arrays.items()}
        arrays.update({f"target.{k}": v for k, v in self.target.arrays.items()})
        save_arrays(path, "q_networks", arrays)

    @classmethod
    def load(cls, path) -> "QNetworks":
        kind, arrays = load_arrays(path)
        if kind != "q_networks":
            raise CheckpointError(f"{path}: holds '{kind}', expected 'q_networks'")
        p = {k[8:]: v for k, v in arrays.items() if k.startswith("primary.")}
        t = {k[7:]: v for k, v in arrays.items() if k.startswith("target.")}
        return cls(QNetwork(p), QNetwork(t))


def greedy_action(q: QNetwork, enc: np.ndarray) -> Maneuver:
    vals = q_values(q, np.atleast_2d(enc))
    if "joint" in vals:
        return Maneuver.from_index(int(vals["joint"][0].argmax()))
    return Maneuver(Lateral(int(vals["lat"][0].argmax())), Longitudinal(int(vals["lon"][0].argmax())))


class QPolicy:
    name = "pmp_drl"

    def __init__(self, encoder: EncoderParams, q: QNetwork):
        self.encoder, self.q = encoder, q

    def __call__(self, obs, env=None) -> Maneuver:
        return greedy_action(self.q, encoder_forward(self.encoder, obs))


# --- training ------------------------------------------------------------------------------------

@dataclass
class DrlConfig:
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.5  # of each dataset's transitions
    batch: int = 32
    capacity: int = 100_000
    target_sync: int = 1000  # gradient steps
    lr: float = 1e-4
    clip_norm: float = 10.0
    huber_delta: float = 1.0
    reward_scale: float = 1.0  # applied to stored rewards only; logs keep the raw scale
    updates_per_step: float = 1.0
    learning_starts: int = 32
    episodes_per_dataset: int | None = None  # None: one episode per eligible vehicle
    cruise_every: int = 2
    joint_head: bool = False
    double_q_rule: str = "as_written"
    q_hidden: tuple[int, int] = (128, 64)
    log_every: int = 500
    seed: int = 0


@dataclass
class DrlResult:
    networks: QNetworks
    checkpoints: list[Path] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)
    episode_rewards: list[float] = field(default_factory=list)


def epsilon_at(step: int, total: int, cfg: DrlConfig) -> float:
    span = max(1, int(cfg.eps_fraction * total))
    frac = min(1.0, step / span)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def _gradient_step(nets: QNetworks, opt: Adam, batch: list, cfg: DrlConfig) -> float:
    s = np.stack([b.state for b in batch])
    s2 = np.stack([b.next_state for b in batch])
    r = np.array([b.reward for b in batch])
    done = np.array([b.done for b in batch], dtype=float)
    targets = ddqn_target(r, s2, nets.primary, nets.target, cfg.gamma, done, cfg.double_q_rule)
    t = nets.primary.tensors()
    q = q_forward_t(t, s)
    loss = None
    for h, qh in q.items():
        acts = np.array([head_actions(b.action, (h,))[h] for b in batch])
        chosen = ag.take_along(qh, acts, axis=1)
        lh = huber_loss(chosen, targets[h], cfg.huber_delta)
        loss = lh if loss is None else loss + lh
    loss.backward()
    opt.step(collect_grads(t))
    return float(loss.data)


def train_drl(env_factory: Callable, datasets: Sequence, config: DrlConfig = DrlConfig(),
              encoder: EncoderParams | None = None, checkpoint_dir=None, log_path=None,
              networks: QNetworks | None = None) -> DrlResult:
    """Curriculum of datasets; each gets a fresh replay buffer and ends with a target sync.

    ``env_factory(dataset)`` must return a DrivingEnv-like object. The encoder
    is only read, never updated.
    """
    if encoder is None:
        raise DependencyError("train_drl needs a pre-trained encoder")
    rng = np.random.default_rng(config.seed)
    if networks is None:
        primary = init_q(encoder.encoding_size, config.q_hidden, config.joint_head, config.seed + 7)
        networks = QNetworks(primary, primary.copy())
    opt = Adam(networks.primary, lr=config.lr, clip_norm=config.clip_norm)
    result = DrlResult(networks)
    grad_steps = 0
    total_steps = 0
    window = {"loss": [], "reward": []}
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    for d_i, dataset in enumerate(datasets):
        env = env_factory(dataset)
        vehicles = env.episode_vehicles()
        if not vehicles:
            continue
        n_ep = config.episodes_per_dataset or len(vehicles)
        schedule = [vehicles[k % len(vehicles)] for k in range(n_ep)]
        planned = sum(env.episode_length(v) for v in schedule)
        buffer = ReplayBuffer(config.capacity, config.cruise_every)
        step_in_dataset = 0
        for vid in schedule:
            obs = env.reset(vid)
            enc = encoder_forward(encoder, obs)
            ep_reward, ep_len = 0.0, 0
            done = False
            while not done:
                eps = epsilon_at(step_in_dataset, planned, config)
                if rng.random() < eps:
                    action = Maneuver(Lateral(int(rng.integers(N_LATERAL))),
                                      Longitudinal(int(rng.integers(N_LONGITUDINAL))))
                else:
                    action = greedy_action(networks.primary, enc)
                res = env.step(action)
                enc2 = encoder_forward(encoder, res.observation)
                r = res.reward.total
                buffer.push(Transition(enc, action, config.reward_scale * r, enc2, res.done),
                            res.info.get("rule_label"))
                enc, done = enc2, res.done
                ep_reward += r
                ep_len += 1
                step_in_dataset += 1
                total_steps += 1
                window["reward"].append(r)
                if total_steps % config.log_every == 0:
                    result.log.append({"steps": total_steps,
                                       "mean_loss": float(np.mean(window["loss"])) if window["loss"] else float("nan"),
                                       "mean_reward": float(np.mean(window["reward"])), "epsilon": eps})
                    window = {"loss": [], "reward": []}
            result.episode_rewards.append(ep_reward)
            if len(buffer) >= max(config.learning_starts, 1):
                for _ in range(int(round(config.updates_per_step * ep_len))):
                    window["loss"].append(_gradient_step(networks, opt, buffer.sample(config.batch, rng), config))
                    grad_steps += 1
                    if grad_steps % config.target_sync == 0:
                        networks.sync()
        networks.sync()
        if ckpt_dir is not None:
            name = getattr(dataset, "name", None) or f"dataset{d_i}"
            path = ckpt_dir / f"q_networks_{d_i:02d}_{name}.bin"
            networks.save(path)
            result.checkpoints.append(path)
    if log_path is not None:
        write_log(result.log, log_path)
    return result


def write_log(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["steps", "mean_loss", "mean_reward", "epsilon"])
        w.writeheader()
        w.writerows(rows)
