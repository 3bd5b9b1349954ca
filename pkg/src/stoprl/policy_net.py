"""Small tanh MLPs with hand-written gradients, categorical sampling and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of
shape ``(B, fan_in)`` maps to ``X @ W + b``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .errors import ContractViolation, TrainingError

HIDDEN = (64, 64)
HIDDEN_GAIN = math.sqrt(2.0)
POLICY_OUT_GAIN = 0.01
VALUE_OUT_GAIN = 1.0


@dataclass
class MlpParams:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def sizes(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def _orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def init_mlp(sizes: Sequence[int], rng, out_gain: float, hidden_gain: float = HIDDEN_GAIN) -> MlpParams:
    """Orthogonal initialisation with zero biases."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    weights, biases = [], []
    for k, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = out_gain if k == len(sizes) - 2 else hidden_gain
        weights.append(_orthogonal(rng, fi, fo, gain))
        biases.append(np.zeros(fo))
    return MlpParams(weights, biases)


def init_policy(in_dim: int, n_actions: int, rng, hidden=HIDDEN) -> MlpParams:
    return init_mlp((in_dim, *hidden, n_actions), rng, POLICY_OUT_GAIN)


def init_critic(in_dim: int, rng, hidden=HIDDEN) -> MlpParams:
    return init_mlp((in_dim, *hidden, 1), rng, VALUE_OUT_GAIN)


def _check_input(params: MlpParams, x: np.ndarray):
    if x.shape[-1] != params.in_dim:
        raise ContractViolation(f"input width {x.shape[-1]} != declared {params.in_dim}")


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_input(params, x)
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if k < last:
            h = np.tanh(h)
    return h


def _forward_cache(params: MlpParams, x: np.ndarray):
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if k < last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def mlp_backward(params: MlpParams, x, output_grad) -> MlpParams:
    """Reverse-mode gradients, summed over the batch when ``x`` is 2-D."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(output_grad, dtype=np.float64)
    _check_input(params, x)
    single = x.ndim == 1
    if single:
        x = x[None, :]
        g = g[None, :]
    if g.shape != (x.shape[0], params.out_dim):
        raise ContractViolation(f"output_grad shape {g.shape} does not match output")
    acts = _forward_cache(params, x)
    n = len(params.weights)
    dw = [None] * n
    db = [None] * n
    for k in range(n - 1, -1, -1):
        if k < n - 1:
            # acts[k + 1] is tanh output of layer k
            g = g * (1.0 - acts[k + 1] ** 2)
        dw[k] = acts[k].T @ g
        db[k] = g.sum(axis=0)
        if k > 0:
            g = g @ params.weights[k].T
    return MlpParams(dw, db)


def forward_backward(params: MlpParams, x: np.ndarray, grad_fn):
    """Forward pass, then backprop of ``grad_fn(output) -> (loss, dloss/doutput)``."""
    acts = _forward_cache(params, x)
    loss, g = grad_fn(acts[-1])
    n = len(params.weights)
    dw = [None] * n
    db = [None] * n
    for k in range(n - 1, -1, -1):
        if k < n - 1:
            g = g * (1.0 - acts[k + 1] ** 2)
        dw[k] = acts[k].T @ g
        db[k] = g.sum(axis=0)
        if k > 0:
            g = g @ params.weights[k].T
    return loss, MlpParams(dw, db)


def log_softmax(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    return np.exp(log_softmax(logits))


def sample_from_uniform(logits, u: float):
    """Inverse-CDF categorical draw; shared convention with the kernels."""
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max()
    e = np.exp(z)
    tot = e.sum()
    cdf = np.cumsum(e / tot)
    a = int(np.searchsorted(cdf, u, side="right"))
    a = min(a, len(cdf) - 1)
    return a, float(z[a] - math.log(tot))


def categorical_sample(logits, rng):
    """Sample ``a ~ softmax(logits)``; returns ``(a, log pi(a))``."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return sample_from_uniform(logits, rng.random())


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    lr: float = 2.5e-4
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params: MlpParams, lr=2.5e-4, beta1=0.9, beta2=0.9, eps=1e-8) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), lr, beta1, beta2, eps)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState):
    """Bias-corrected Adam; updates ``params`` and ``state`` in place and returns both."""
    for g in grads.arrays():
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient passed to Adam")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def global_norm(*grads: MlpParams) -> float:
    return math.sqrt(sum(float(np.sum(a * a)) for g in grads for a in g.arrays()))


def clip_by_global_norm(max_norm: float, *grads: MlpParams) -> float:
    norm = global_norm(*grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads:
            for a in g.arrays():
                a *= scale
    return norm


# Checkpoint layout (little endian):
#   8 bytes  magic b"STOPMLP1"
#   uint32   number of layers L
#   L x (uint32 fan_in, uint32 fan_out)
#   for each layer: fan_in*fan_out float64 weights (row-major), then fan_out float64 biases
_MAGIC = b"STOPMLP1"


def save_params(params: MlpParams, path) -> None:
    buf = bytearray(_MAGIC)
    buf += struct.pack("<I", len(params.weights))
    for w in params.weights:
        buf += struct.pack("<II", *w.shape)
    for w, b in zip(params.weights, params.biases):
        buf += np.ascontiguousarray(w, dtype="<f8").tobytes()
        buf += np.ascontiguousarray(b, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_params(path) -> MlpParams:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path} is not a parameter checkpoint")
    (n,) = struct.unpack_from("<I", data, 8)
    off = 12
    shapes = []
    for _ in range(n):
        shapes.append(struct.unpack_from("<II", data, off))
        off += 8
    weights, biases = [], []
    for fi, fo in shapes:
        w = np.frombuffer(data, dtype="<f8", count=fi * fo, offset=off).reshape(fi, fo)
        off += 8 * fi * fo
        b = np.frombuffer(data, dtype="<f8", count=fo, offset=off)
        off += 8 * fo
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if off != len(data):
        raise ValueError(f"{path} has {len(data) - off} trailing bytes")
    return MlpParams(weights, biases)
