"""Two-layer tanh policy/value network with hand-written gradients and Adam.

Parameters live in one flat float64 vector ``theta`` laid out as

    W1 (23 x 64), b1 (64), W2 (64 x 64), b2 (64),
    Wpi (64 x 31), bpi (31), Wv (64 x 1), bv (1)

with matrices stored row-major as (inputs x outputs).  Both heads read the
second hidden layer.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IN_DIM, HIDDEN, N_ACTIONS = 23, 64, 31
LAYER_SIZES = (IN_DIM, HIDDEN, HIDDEN, N_ACTIONS)

MAGIC = b"OBSPNET\0"
FORMAT_VERSION = 1


def param_shapes(sizes=LAYER_SIZES):
    n_in, h1, h2, n_out = sizes
    return [("W1", (n_in, h1)), ("b1", (h1,)), ("W2", (h1, h2)), ("b2", (h2,)),
            ("Wpi", (h2, n_out)), ("bpi", (n_out,)), ("Wv", (h2, 1)), ("bv", (1,))]


def param_count(sizes=LAYER_SIZES) -> int:
    return sum(int(np.prod(s)) for _, s in param_shapes(sizes))


def _orthogonal(rng, shape, gain):
    a = rng.standard_normal((max(shape), min(shape)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[:shape[0], :shape[1]]


class PolicyValueNet:
    """Shared-trunk network; ``views`` are reshaped windows into ``theta``."""

    def __init__(self, theta: np.ndarray | None = None, sizes=LAYER_SIZES):
        self.sizes = tuple(int(s) for s in sizes)
        n = param_count(self.sizes)
        if theta is None:
            theta = np.zeros(n)
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (n,):
            raise ValueError(f"theta must have {n} entries, got {theta.shape}")
        self.theta = theta.copy()
        self._cache = None

    @classmethod
    def init(cls, rng: np.random.Generator, sizes=LAYER_SIZES,
             gains=(1.0, 1.0, 0.01, 1.0)) -> "PolicyValueNet":
        """Orthogonal weights with per-layer gains (W1, W2, Wpi, Wv), zero biases."""
        net = cls(sizes=sizes)
        v = net.views(net.theta)
        for name, gain in zip(("W1", "W2", "Wpi", "Wv"), gains):
            v[name][...] = _orthogonal(rng, v[name].shape, gain)
        return net

    def views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        out, pos = {}, 0
        for name, shape in param_shapes(self.sizes):
            size = int(np.prod(shape))
            out[name] = flat[pos:pos + size].reshape(shape)
            pos += size
        return out

    @property
    def n_params(self) -> int:
        return self.theta.size

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Logits (B x 31) and values (B,) for a batch; a 1-D input gives 1-D/scalar output."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValueError(f"input must have {self.sizes[0]} features, got shape {x.shape}")
        p = self.views(self.theta)
        h1 = np.tanh(x @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        logits = h2 @ p["Wpi"] + p["bpi"]
        value = (h2 @ p["Wv"])[:, 0] + p["bv"][0]
        self._cache = (x, h1, h2)
        if single:
            return logits[0], value[0]
        return logits, value

    def backward(self, dlogits: np.ndarray, dvalue: np.ndarray) -> np.ndarray:
        """Gradient of a scalar loss given its gradients w.r.t. the last forward's outputs."""
        if self._cache is None:
            raise RuntimeError("backward called without a preceding forward")
        x, h1, h2 = self._cache
        dlogits = np.asarray(dlogits, dtype=np.float64).reshape(len(x), -1)
        dvalue = np.asarray(dvalue, dtype=np.float64).reshape(len(x))
        p = self.views(self.theta)
        grad = np.zeros_like(self.theta)
        g = self.views(grad)
        g["Wpi"][...] = h2.T @ dlogits
        g["bpi"][...] = dlogits.sum(0)
        g["Wv"][:, 0] = h2.T @ dvalue
        g["bv"][0] = dvalue.sum()
        dh2 = dlogits @ p["Wpi"].T + np.outer(dvalue, p["Wv"][:, 0])
        dz2 = dh2 * (1.0 - h2 * h2)
        g["W2"][...] = h1.T @ dz2
        g["b2"][...] = dz2.sum(0)
        dz1 = (dz2 @ p["W2"].T) * (1.0 - h1 * h1)
        g["W1"][...] = x.T @ dz1
        g["b1"][...] = dz1.sum(0)
        return grad


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **hyper)


class NonFiniteGradient(FloatingPointError):
    pass


def adam_step(state: AdamState, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Bias-corrected Adam descent step; returns the new parameter vector."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape or state.m.shape != theta.shape:
        raise ValueError("gradient, moments and parameters must have the same shape")
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NonFiniteGradient(f"non-finite gradient at parameter {bad}; update refused")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ------------------------------------------------------------------ checkpoint
class CheckpointError(ValueError):
    pass


_HEAD = struct.Struct("<8sI4I")


def dumps_checkpoint(net: PolicyValueNet, adam: AdamState, meta: bytes = b"") -> bytes:
    """Binary checkpoint; all floats little-endian float64."""
    parts = [
        _HEAD.pack(MAGIC, FORMAT_VERSION, *net.sizes),
        struct.pack("<Q", adam.step),
        struct.pack("<4d", adam.lr, adam.beta1, adam.beta2, adam.eps),
        net.theta.astype("<f8").tobytes(),
        adam.m.astype("<f8").tobytes(),
        adam.v.astype("<f8").tobytes(),
        struct.pack("<I", len(meta)),
        meta,
    ]
    return b"".join(parts)


def loads_checkpoint(data: bytes) -> tuple[PolicyValueNet, AdamState, bytes]:
    if len(data) < _HEAD.size or data[:8] != MAGIC:
        raise CheckpointError("not an obsp checkpoint (bad magic)")
    magic, version, *sizes = _HEAD.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported "
                              f"(this build reads version {FORMAT_VERSION})")
    pos = _HEAD.size
    n = param_count(sizes)
    need = pos + 8 + 32 + 3 * 8 * n + 4
    if len(data) < need:
        raise CheckpointError("checkpoint is truncated")
    (step,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    lr, b1, b2, eps = struct.unpack_from("<4d", data, pos)
    pos += 32
    arrays = []
    for _ in range(3):
        arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64))
        pos += 8 * n
    (mlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = data[pos:pos + mlen]
    if len(meta) != mlen or pos + mlen != len(data):
        raise CheckpointError("checkpoint has a bad trailer")
    net = PolicyValueNet(arrays[0], sizes)
    adam = AdamState(arrays[1], arrays[2], int(step), lr, b1, b2, eps)
    return net, adam, bytes(meta)


def save_checkpoint(path, net: PolicyValueNet, adam: AdamState, meta: bytes = b"") -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps_checkpoint(net, adam, meta))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[PolicyValueNet, AdamState, bytes]:
    return loads_checkpoint(Path(path).read_bytes())
