"""Dense ReLU network for Q-values, trained by masked semi-gradient updates.

Weights are stored as ``W[k]`` with shape ``(in, out)`` so that a layer is
``x @ W + b``.  Hidden layers use ReLU, the output layer is linear.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PLMLPW01"
FORMAT_VERSION = 1


class WeightsFormatError(ValueError):
    pass


@dataclass
class Mlp:
    layer_dims: list[int]
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def init(cls, layer_dims, rng: np.random.Generator) -> "Mlp":
        """Uniform fan-in initialization, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``."""
        ws, bs = [], []
        for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
            lim = np.sqrt(6.0 / n_in)
            ws.append(rng.uniform(-lim, lim, size=(n_in, n_out)))
            bs.append(np.zeros(n_out))
        return cls(list(layer_dims), ws, bs)

    @classmethod
    def zeros(cls, layer_dims) -> "Mlp":
        return cls(list(layer_dims),
                   [np.zeros((a, b)) for a, b in zip(layer_dims[:-1], layer_dims[1:])],
                   [np.zeros(b) for b in layer_dims[1:]])

    @property
    def n_actions(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(list(self.layer_dims), [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases])


def forward(net: Mlp, x) -> np.ndarray:
    """Q-values for one state (1-D) or a batch of states (2-D)."""
    h = np.asarray(x, dtype=float)
    if h.shape[-1] != net.layer_dims[0]:
        raise ValueError(f"expected input of size {net.layer_dims[0]}, got {h.shape[-1]}")
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h


def loss_and_grads(net: Mlp, states, actions, targets):
    """Masked half-MSE ``0.5 * mean_b (y_b - Q(s_b, a_b))^2`` and its gradients.

    Only the chosen action's output carries error; all other outputs get a
    zero gradient.
    """
    x = np.asarray(states, dtype=float)
    a = np.asarray(actions, dtype=int)
    y = np.asarray(targets, dtype=float)
    n = x.shape[0]
    acts = [x]
    pre = []
    h = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if k < last else z
        acts.append(h)
    q = acts[-1]
    err = q[np.arange(n), a] - y
    loss = 0.5 * float(np.mean(err ** 2))
    delta = np.zeros_like(q)
    delta[np.arange(n), a] = err / n
    gw = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for k in range(last, -1, -1):
        gw[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ net.weights[k].T) * (pre[k - 1] > 0)
    return loss, gw, gb


@dataclass
class Optimizer:
    """Plain SGD (the reference update) or Adam."""

    learning_rate: float = 0.001
    kind: str = "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")

    def apply(self, net: Mlp, gw, gb):
        params = net.params()
        grads = []
        for w, b in zip(gw, gb):
            grads += [w, b]
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p -= self.learning_rate * g
            return
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_batch(net: Mlp, states, actions, targets, opt: Optimizer | None = None) -> float:
    """One semi-gradient step toward ``targets`` on the chosen actions.

    Returns the mean squared error before the update.
    """
    y = np.asarray(targets, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite target in batch")
    opt = opt or Optimizer()
    loss, gw, gb = loss_and_grads(net, states, actions, y)
    opt.apply(net, gw, gb)
    return 2.0 * loss


def copy_into(src: Mlp, dst: Mlp):
    if src.layer_dims != dst.layer_dims:
        raise ValueError(f"dimension mismatch {src.layer_dims} vs {dst.layer_dims}")
    for a, b in zip(src.weights, dst.weights):
        b[...] = a
    for a, b in zip(src.biases, dst.biases):
        b[...] = a


def save_weights(net: Mlp, path: str | Path):
    """Binary layout: magic, u32 version, u32 layer count, u32 dims, then per
    layer W (row-major, shape in x out) and b as little-endian float64."""
    n = len(net.weights)
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, n),
             struct.pack(f"<{n + 1}I", *net.layer_dims)]
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path: str | Path) -> Mlp:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise WeightsFormatError(f"{path}: bad magic at offset 0")
    if len(data) < 16:
        raise WeightsFormatError(f"{path}: truncated header at offset 8")
    version, n = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise WeightsFormatError(f"{path}: unsupported version {version} at offset 8")
    off = 16
    if len(data) < off + 4 * (n + 1):
        raise WeightsFormatError(f"{path}: truncated dims at offset {off}")
    dims = list(struct.unpack_from(f"<{n + 1}I", data, off))
    off += 4 * (n + 1)
    ws, bs = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        need = 8 * (a * b + b)
        if len(data) < off + need:
            raise WeightsFormatError(f"{path}: truncated parameters at offset {off}")
        ws.append(np.frombuffer(data, dtype="<f8", count=a * b, offset=off).reshape(a, b).astype(float))
        off += 8 * a * b
        bs.append(np.frombuffer(data, dtype="<f8", count=b, offset=off).astype(float))
        off += 8 * b
    if off != len(data):
        raise WeightsFormatError(f"{path}: {len(data) - off} trailing bytes at offset {off}")
    return Mlp(dims, ws, bs)
