"""Action-value functions: an exact table and a small numpy MLP.

Both map a history encoding (``bytes`` of 0/1 features) to one value per
action. Greedy selection only ranges over legal actions.

Checkpoint record (little-endian)::

    magic "SKQF" | u16 format version | u8 variant (0 tabular, 1 mlp)
    | 8B config digest | u16 num_actions | u16 horizon | u32 input width
    | 8B tie seed | f64 acting epsilon | body

    tabular body: u32 entries | u32 key width | entries sorted by key,
                  each key bytes then num_actions f64
    mlp body:     u16 layers | u32 sizes[layers + 1] | per layer W (row-major) then b, f64
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Optional, Sequence

import numpy as np

CHECKPOINT_VERSION = 1
_MAGIC = b"SKQF"
_HEADER = struct.Struct("<4sHB8sHHI8sd")
_VARIANTS = {"tabular": 0, "mlp": 1}


class ShapeError(ValueError):
    pass


def _tie_priorities(key: bytes, tie_seed: bytes, num_actions: int) -> bytes:
    return hashlib.blake2b(key, key=tie_seed, digest_size=max(num_actions, 1)).digest()


class QFunction:
    variant: str
    num_actions: int
    horizon: int
    input_width: int
    tie_seed: bytes
    act_epsilon: float = 0.0

    def values(self, key: bytes) -> Sequence[float]:
        raise NotImplementedError

    def greedy(self, key: bytes, legal: Sequence[int]) -> int:
        q = self.values(key)
        best = max(q[a] for a in legal)
        tied = [a for a in legal if q[a] == best]
        if len(tied) == 1:
            return tied[0]
        # seeded per-history preference among exact ties; differs across runs
        pri = _tie_priorities(key, self.tie_seed, self.num_actions)
        return max(tied, key=lambda a: (pri[a], -a))

    def copy(self) -> "QFunction":
        raise NotImplementedError

    def to_bytes(self, config_digest: bytes = bytes(8)) -> bytes:
        header = _HEADER.pack(
            _MAGIC,
            CHECKPOINT_VERSION,
            _VARIANTS[self.variant],
            config_digest,
            self.num_actions,
            self.horizon,
            self.input_width,
            self.tie_seed,
            self.act_epsilon,
        )
        return header + self._body_bytes()

    def _body_bytes(self) -> bytes:
        raise NotImplementedError

    def digest(self) -> str:
        return hashlib.blake2b(self.to_bytes(), digest_size=8).hexdigest()


class TabularQ(QFunction):
    """Dict from full history encoding to a list of action values.

    Unseen keys read as zeros and are not inserted.
    """

    variant = "tabular"

    def __init__(self, num_actions: int, input_width: int, horizon: int = 1, tie_seed: bytes = bytes(8)):
        self.num_actions = num_actions
        self.input_width = input_width
        self.horizon = horizon
        self.tie_seed = bytes(tie_seed)
        self.table: dict[bytes, list[float]] = {}
        self._zeros = (0.0,) * num_actions

    def __len__(self) -> int:
        return len(self.table)

    def values(self, key: bytes) -> Sequence[float]:
        return self.table.get(key, self._zeros)

    def row(self, key: bytes) -> list[float]:
        r = self.table.get(key)
        if r is None:
            if len(key) != self.input_width:
                raise ShapeError(f"key width {len(key)} != {self.input_width}")
            r = [0.0] * self.num_actions
            self.table[key] = r
        return r

    def copy(self) -> "TabularQ":
        out = TabularQ(self.num_actions, self.input_width, self.horizon, self.tie_seed)
        out.table = {k: list(v) for k, v in self.table.items()}
        out.act_epsilon = self.act_epsilon
        return out

    def copy_keys_from(self, other: "TabularQ", keys) -> None:
        for k in keys:
            self.table[k] = list(other.table[k])

    def _body_bytes(self) -> bytes:
        keys = sorted(self.table)
        width = self.input_width
        pack = struct.Struct(f"<{self.num_actions}d").pack
        parts = [struct.pack("<II", len(keys), width)]
        for k in keys:
            parts.append(k)
            parts.append(pack(*self.table[k]))
        return b"".join(parts)


class MLPQ(QFunction):
    """ReLU MLP with a linear action-value head, float64 throughout."""

    variant = "mlp"

    def __init__(
        self,
        num_actions: int,
        input_width: int,
        hidden_sizes: Sequence[int] = (64, 64),
        horizon: int = 1,
        tie_seed: bytes = bytes(8),
        rng: Optional[np.random.Generator] = None,
    ):
        self.num_actions = num_actions
        self.input_width = input_width
        self.horizon = horizon
        self.tie_seed = bytes(tie_seed)
        self.sizes = [input_width, *hidden_sizes, num_actions]
        rng = rng if rng is not None else np.random.default_rng(int.from_bytes(self.tie_seed, "little"))
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = i == len(self.sizes) - 2
            scale = np.sqrt(2.0 / fan_in) * (0.1 if last else 1.0)
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x: np.ndarray, keep: bool = False):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ShapeError(f"expected (batch, {self.input_width}) input, got {x.shape}")
        acts = [x]
        h = x
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == n - 1 else np.maximum(z, 0.0)
            acts.append(h)
        return (h, acts) if keep else h

    def backward(self, acts: list[np.ndarray], dout: np.ndarray) -> list[np.ndarray]:
        """Gradients of sum(dout * output) w.r.t. params, ordered like ``params``."""
        grads: list[np.ndarray] = []
        delta = dout
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = acts[i]
            grads.append(delta.sum(axis=0))
            grads.append(h_in.T @ delta)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0.0)
        # grads were collected as [b_last, W_last, ...]; flip to [W0, b0, ...]
        grads.reverse()
        return grads

    def loss_and_grad(self, x, actions, targets, weights):
        """0.5 * mean(w * (target - Q(x, a))^2) and its parameter gradient."""
        q, acts = self.forward(x, keep=True)
        n = q.shape[0]
        idx = np.arange(n)
        td = targets - q[idx, actions]
        loss = 0.5 * float(np.mean(weights * td * td))
        dout = np.zeros_like(q)
        dout[idx, actions] = -(weights * td) / n
        return loss, self.backward(acts, dout), td

    def values(self, key: bytes) -> Sequence[float]:
        x = np.frombuffer(key, dtype=np.uint8).astype(np.float64)[None, :]
        return self.forward(x)[0].tolist()

    def batch_values(self, keys: Sequence[bytes]) -> np.ndarray:
        x = np.frombuffer(b"".join(keys), dtype=np.uint8).reshape(len(keys), self.input_width)
        return self.forward(x.astype(np.float64))

    def copy(self) -> "MLPQ":
        out = MLPQ.__new__(MLPQ)
        out.num_actions = self.num_actions
        out.input_width = self.input_width
        out.horizon = self.horizon
        out.tie_seed = self.tie_seed
        out.sizes = list(self.sizes)
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        out.act_epsilon = self.act_epsilon
        return out

    def _body_bytes(self) -> bytes:
        parts = [struct.pack("<H", len(self.weights)), struct.pack(f"<{len(self.sizes)}I", *self.sizes)]
        for w, b in zip(self.weights, self.biases):
            parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
        return b"".join(parts)


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, eps: float, betas=(0.9, 0.999)):
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


def qfunction_from_bytes(data: bytes) -> QFunction:
    magic, version, variant, _digest, n_act, horizon, width, tie_seed, eps = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC:
        raise ValueError("not a Q-function checkpoint")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = _HEADER.size
    if variant == _VARIANTS["tabular"]:
        q = TabularQ(n_act, width, horizon, tie_seed)
        n, key_width = struct.unpack_from("<II", data, pos)
        pos += 8
        stride = key_width + 8 * n_act
        vals = struct.Struct(f"<{n_act}d")
        table = {}
        for i in range(n):
            start = pos + i * stride
            table[data[start:start + key_width]] = list(vals.unpack_from(data, start + key_width))
        pos += n * stride
        q.table = table
    elif variant == _VARIANTS["mlp"]:
        (n_layers,) = struct.unpack_from("<H", data, pos)
        pos += 2
        sizes = list(struct.unpack_from(f"<{n_layers + 1}I", data, pos))
        pos += 4 * (n_layers + 1)
        q = MLPQ.__new__(MLPQ)
        q.num_actions, q.input_width, q.horizon, q.tie_seed = n_act, width, horizon, tie_seed
        q.sizes = sizes
        q.weights, q.biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=pos).reshape(fan_in, fan_out)
            pos += 8 * fan_in * fan_out
            b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=pos)
            pos += 8 * fan_out
            q.weights.append(w.astype(np.float64))
            q.biases.append(b.astype(np.float64))
    else:
        raise ValueError(f"unknown variant tag {variant}")
    if pos != len(data):
        raise ValueError("trailing bytes after checkpoint body")
    q.act_epsilon = eps
    return q


def checkpoint_digest(data: bytes) -> bytes:
    return _HEADER.unpack_from(data, 0)[3]


def qfunction_to_json(q: QFunction) -> str:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "variant": q.variant,
        "num_actions": q.num_actions,
        "horizon": q.horizon,
        "input_width": q.input_width,
        "tie_seed": q.tie_seed.hex(),
        "act_epsilon": q.act_epsilon,
    }
    if isinstance(q, TabularQ):
        doc["entries"] = {k.hex(): v for k, v in sorted(q.table.items())}
    else:
        doc["sizes"] = q.sizes
        doc["weights"] = [w.tolist() for w in q.weights]
        doc["biases"] = [b.tolist() for b in q.biases]
    return json.dumps(doc)


def make_qfunction(variant: str, num_actions: int, input_width: int, *, horizon: int = 1,
                   hidden_sizes=(64, 64), seed: int = 0) -> QFunction:
    tie_seed = struct.pack("<Q", seed & ((1 << 64) - 1))
    if variant == "tabular":
        return TabularQ(num_actions, input_width, horizon, tie_seed)
    if variant == "mlp":
        return MLPQ(num_actions, input_width, hidden_sizes, horizon, tie_seed,
                    np.random.default_rng(seed))
    raise ValueError(f"unknown Q-function variant {variant!r}")
