"""Dense networks with hand-written backprop, Adam, and a categorical policy head.

Everything runs in float64 so gradients can be checked against central
finite differences to tight tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class StaleCacheError(RuntimeError):
    pass


ACTIVATIONS = ("relu", "tanh")


class Mlp:
    """Fully connected network; activation on hidden layers only.

    ``weights[l]`` has shape ``(layer_sizes[l+1], layer_sizes[l])``. Inputs may
    be a single vector or a ``(batch, in)`` matrix.
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        activation: str = "relu",
        rng: np.random.Generator | None = None,
        out_gain: float = 1.0,
    ):
        if len(layer_sizes) < 2 or any(s < 1 for s in layer_sizes):
            raise ShapeError(f"invalid layer sizes {layer_sizes}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.activation = activation
        self.version = 0
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            if activation == "relu":
                limit = np.sqrt(6.0 / fan_in)
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))
        self.weights[-1] *= out_gain

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, flat: Sequence[np.ndarray]) -> None:
        for i in range(self.n_layers):
            self.weights[i] = np.array(flat[2 * i], dtype=np.float64)
            self.biases[i] = np.array(flat[2 * i + 1], dtype=np.float64)
        self.version += 1

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.layer_sizes = list(self.layer_sizes)
        other.activation = self.activation
        other.version = 0
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def _act(self, z: np.ndarray) -> np.ndarray:
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    def _dact(self, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        return (z > 0).astype(np.float64) if self.activation == "relu" else 1.0 - a * a

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, "Cache"]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.layer_sizes[0]:
            raise ShapeError(f"expected input width {self.layer_sizes[0]}, got {x.shape[-1]}")
        single = x.ndim == 1
        h = x[None, :] if single else x
        inputs, pre = [], []
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w.T + b
            pre.append(z)
            h = z if i == last else self._act(z)
        cache = Cache(inputs, pre, single, self.version, id(self))
        return (h[0] if single else h), cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        h = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i != last:
                h = self._act(h)
        return h

    def backward(self, cache: "Cache", upstream: np.ndarray) -> "Gradients":
        """Gradients of ``sum(upstream * output)`` w.r.t. parameters and input."""
        if cache.owner != id(self) or cache.version != self.version:
            raise StaleCacheError("cache was produced by a different network or before an update")
        g = np.asarray(upstream, dtype=np.float64)
        g = g[None, :] if cache.single else g
        dws: list[np.ndarray] = [None] * self.n_layers  # type: ignore[list-item]
        dbs: list[np.ndarray] = [None] * self.n_layers  # type: ignore[list-item]
        for i in reversed(range(self.n_layers)):
            if i != self.n_layers - 1:
                z = cache.pre[i]
                g = g * self._dact(z, self._act(z))
            dws[i] = g.T @ cache.inputs[i]
            dbs[i] = g.sum(axis=0)
            g = g @ self.weights[i]
        dx = g[0] if cache.single else g
        return Gradients(dws, dbs, dx)


@dataclass
class Cache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    single: bool
    version: int
    owner: int


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray | None = None

    def flat(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    def scale(self, k: float) -> "Gradients":
        return Gradients([w * k for w in self.weights], [b * k for b in self.biases], self.input)

    def sq_norm(self) -> float:
        return float(sum(np.sum(p * p) for p in self.flat()))


def clip_grad_norm(grads: Sequence[Gradients], max_norm: float) -> tuple[list[Gradients], float]:
    """Scale a group of gradients jointly so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(g.sq_norm() for g in grads)))
    if not np.isfinite(total):
        raise NumericError("non-finite gradient norm")
    if max_norm > 0 and total > max_norm:
        k = max_norm / (total + 1e-6)
        return [g.scale(k) for g in grads], total
    return list(grads), total


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_net(cls, net: Mlp, lr: float = 3e-4, **kw) -> "AdamState":
        st = cls(lr=lr, **kw)
        st.m = [np.zeros_like(p) for p in net.params()]
        st.v = [np.zeros_like(p) for p in net.params()]
        return st


def adam_step(net: Mlp, grads: Gradients, opt: AdamState) -> Mlp:
    """In-place bias-corrected Adam update; returns ``net``."""
    flat = grads.flat()
    if any(not np.all(np.isfinite(g)) for g in flat):
        raise NumericError("NaN or Inf in gradients; update aborted")
    if not opt.m:
        opt.m = [np.zeros_like(p) for p in net.params()]
        opt.v = [np.zeros_like(p) for p in net.params()]
    opt.t += 1
    c1 = 1.0 - opt.beta1**opt.t
    c2 = 1.0 - opt.beta2**opt.t
    new = []
    for p, g, m, v in zip(net.params(), flat, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        new.append(p - opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps))
    net.set_params(new)
    return net


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - np.max(logits, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


def sample_from_uniform(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw; ``u`` in [0, 1)."""
    idx = int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right"))
    return min(idx, len(probs) - 1)


def softmax_sample(logits: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    logits = np.asarray(logits, dtype=np.float64)
    logp = log_softmax(logits)
    a = sample_from_uniform(np.exp(logp), rng.random())
    return a, float(logp[a])


def finite_diff_check(
    net: Mlp,
    x: np.ndarray,
    loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    eps: float = 1e-5,
) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn(output)`` returns ``(loss, dloss/doutput)``.
    """
    out, cache = net.forward(x)
    loss, dout = loss_fn(out)
    if not np.isfinite(loss):
        raise NumericError("loss is not finite")
    analytic = net.backward(cache, dout).flat()
    params = net.params()
    worst = 0.0
    for p, ga in zip(params, analytic):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            lp = loss_fn(net(x))[0]
            p[idx] = orig - eps
            lm = loss_fn(net(x))[0]
            p[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError("loss is not finite under perturbation")
            num = (lp - lm) / (2 * eps)
            a = ga[idx]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
