"""Parameter containers, initialisation, the Adam optimiser and binary checkpoints."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autograd import Tensor

MAGIC = b"MRLCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ParamSet:
    """Named float64 arrays with a fixed key order.

    Subclasses set ``kind`` so a checkpoint of one component cannot be loaded
    as another.
    """

    kind = "params"

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        for k, v in self.arrays.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"parameter {k} has non-finite values")

    def __getitem__(self, key) -> np.ndarray:
        return self.arrays[key]

    def __repr__(self):
        shapes = ", ".join(f"{k}{v.shape}" for k, v in self.arrays.items())
        return f"{type(self).__name__}({shapes})"

    def copy(self):
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.arrays = {k: v.copy() for k, v in self.arrays.items()}
        return new

    def tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}

    def equals(self, other) -> bool:
        return (self.arrays.keys() == other.arrays.keys()
                and all(np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items()))

    def n_params(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def save(self, path) -> None:
        save_arrays(path, self.kind, self.arrays)

    @classmethod
    def load(cls, path):
        kind, arrays = load_arrays(path)
        if kind != cls.kind:
            raise CheckpointError(f"{path}: holds '{kind}', expected '{cls.kind}'")
        new = object.__new__(cls)
        ParamSet.__init__(new, arrays)
        return new


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    """U(-b, b) with b = gain / sqrt(fan_in); gain sqrt(6) is He init for rectifier layers."""
    bound = gain / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def save_arrays(path, kind: str, arrays: dict[str, np.ndarray]) -> None:
    """Flat little-endian layout: header, per-array name and dims, then float64 data."""
    kb = kind.encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(kb)), kb, struct.pack("<I", len(arrays))]
    for name, a in arrays.items():
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{a.ndim}Q", a.ndim, *a.shape))
    for a in arrays.values():
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_arrays(path) -> tuple[str, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, klen = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 16
    kind = buf[pos:pos + klen].decode()
    pos += klen
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    specs = []
    for _ in range(n):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        specs.append((name, shape))
    arrays = {}
    for name, shape in specs:
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return kind, arrays


class Adam:
    """Adam on a ParamSet's arrays (updated in place), with optional global-norm clipping."""

    def __init__(self, params: ParamSet, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 clip_norm: float | None = None):
        self.params = params
        self.lr, self.betas, self.eps, self.clip_norm = lr, betas, eps, clip_norm
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> float:
        """Apply one update; returns the (pre-clip) gradient norm."""
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        b1, b2 = self.betas
        for k, g in grads.items():
            g = g * scale
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mh = self.m[k] / (1 - b1 ** self.t)
            vh = self.v[k] / (1 - b2 ** self.t)
            self.params.arrays[k] -= self.lr * mh / (np.sqrt(vh) + self.eps)
        return norm


def collect_grads(tensors: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}
