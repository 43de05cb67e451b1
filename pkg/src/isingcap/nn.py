"""Small fully connected networks with hand-written backpropagation.

Two heads are supported: ``softmax`` reshapes the output to an (n, n) matrix
and normalizes each row (actor), ``linear`` emits one scalar (critic).
Hidden layers use ReLU.  Inputs are batched, shape (B, d_in).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .channel import InvalidArgument


class StateError(RuntimeError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class GradientSet:
    weights: list
    biases: list
    input: np.ndarray | None = None

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for g in self.weights + self.biases)))

    def scale(self, factor: float) -> "GradientSet":
        return GradientSet([g * factor for g in self.weights], [g * factor for g in self.biases],
                           None if self.input is None else self.input * factor)

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet([a + b for a, b in zip(self.weights, other.weights)],
                           [a + b for a, b in zip(self.biases, other.biases)])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.weights + self.biases)


@dataclass
class ForwardCache:
    activations: list  # input to each layer
    preacts: list      # pre-activation of each hidden layer
    masks: list        # dropout masks (None when off)
    output: np.ndarray


@dataclass
class MlpPolicy:
    sizes: list
    head: str
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    dropout: float = 0.0
    action_dim: int | None = None
    _last: ForwardCache | None = field(default=None, repr=False)

    @classmethod
    def create(cls, sizes, head: str, rng: np.random.Generator, dropout: float = 0.0,
               output_scale: float = 3e-3):
        """Uniform fan-in initialization; the output layer is drawn from +-output_scale."""
        if head not in ("softmax", "linear"):
            raise InvalidArgument(f"unknown head {head!r}")
        if not 0.0 <= dropout < 1.0:
            raise InvalidArgument("dropout must lie in [0, 1)")
        sizes = [int(s) for s in sizes]
        weights, biases = [], []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            lim = output_scale if k == len(sizes) - 2 else 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-lim, lim, size=fan_out))
        action_dim = None
        if head == "softmax":
            action_dim = int(round(np.sqrt(sizes[-1])))
            if action_dim * action_dim != sizes[-1]:
                raise InvalidArgument("softmax head needs a square output size")
        return cls(sizes, head, weights, biases, dropout, action_dim)

    @classmethod
    def zeros(cls, sizes, head: str, dropout: float = 0.0):
        net = cls.create(sizes, head, np.random.default_rng(0), dropout)
        for w, b in zip(net.weights, net.biases):
            w[...] = 0.0
            b[...] = 0.0
        return net

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    def copy(self) -> "MlpPolicy":
        return MlpPolicy(list(self.sizes), self.head, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.dropout, self.action_dim)

    def parameters(self):
        return self.weights + self.biases

    # -- forward / backward ------------------------------------------------

    def forward(self, x, noise=None, dropout_rng: np.random.Generator | None = None,
                record: bool = True):
        """Raw network output (logits for actors).  Returns (out, cache)."""
        a = np.atleast_2d(np.asarray(x, dtype=float))
        if a.shape[-1] != self.sizes[0]:
            raise InvalidArgument(f"input width {a.shape[-1]} != {self.sizes[0]}")
        acts, pres, masks = [], [], []
        last = self.n_hidden - 1
        for k in range(self.n_hidden):
            acts.append(a)
            h = a @ self.weights[k] + self.biases[k]
            if k == last and noise is not None:
                h = h + noise
            pres.append(h)
            a = np.maximum(h, 0.0)
            mask = None
            if dropout_rng is not None and self.dropout > 0:
                keep = 1.0 - self.dropout
                mask = (dropout_rng.random(a.shape) < keep) / keep
                a = a * mask
            masks.append(mask)
        acts.append(a)
        out = a @ self.weights[-1] + self.biases[-1]
        cache = ForwardCache(acts, pres, masks, out)
        if record:
            self._last = cache
        return out, cache

    def backward(self, cache: ForwardCache, g_out: np.ndarray) -> GradientSet:
        """Gradients of sum(g_out * out) w.r.t. parameters and input."""
        g = np.asarray(g_out, dtype=float).reshape(cache.output.shape)
        dws = [None] * len(self.weights)
        dbs = [None] * len(self.biases)
        for k in range(len(self.weights) - 1, -1, -1):
            a_in = cache.activations[k]
            dws[k] = a_in.T @ g
            dbs[k] = g.sum(axis=0)
            g = g @ self.weights[k].T
            if k > 0:
                if cache.masks[k - 1] is not None:
                    g = g * cache.masks[k - 1]
                g = g * (cache.preacts[k - 1] > 0)
        return GradientSet(dws, dbs, g)

    def backprop(self, g_out) -> GradientSet:
        if self._last is None:
            raise StateError("backprop called before any recorded forward pass")
        return self.backward(self._last, g_out)

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "sizes": self.sizes,
            "head": self.head,
            "dropout": self.dropout,
            "layers": [{"W": w.tolist(), "b": b.tolist()} for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_json(cls, data: dict) -> "MlpPolicy":
        net = cls.zeros(data["sizes"], data["head"], data.get("dropout", 0.0))
        for k, layer in enumerate(data["layers"]):
            net.weights[k][...] = np.asarray(layer["W"], dtype=float)
            net.biases[k][...] = np.asarray(layer["b"], dtype=float)
        return net

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "MlpPolicy":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def actor(n: int, hidden, rng, dropout: float = 0.0) -> MlpPolicy:
    return MlpPolicy.create([n, *hidden, n * n], "softmax", rng, dropout)


def critic(n: int, hidden, rng) -> MlpPolicy:
    return MlpPolicy.create([n + n * n, *hidden, 1], "linear", rng)


def row_softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_vjp(u: np.ndarray, gu: np.ndarray) -> np.ndarray:
    return u * (gu - np.sum(gu * u, axis=-1, keepdims=True))


def actor_forward(net: MlpPolicy, z, noise=None, dropout_on: bool = False,
                  rng: np.random.Generator | None = None, record: bool = True):
    """Row-stochastic action matrix A(z); batched input gives (B, n, n)."""
    if net.head != "softmax":
        raise InvalidArgument("actor_forward needs a softmax-head network")
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    if dropout_on and rng is None:
        raise InvalidArgument("dropout needs an rng")
    out, cache = net.forward(z, noise=noise, dropout_rng=rng if dropout_on else None, record=record)
    n = net.action_dim
    u = row_softmax(out.reshape(-1, n, n))
    return (u[0] if single else u), cache


def actor_backward(net: MlpPolicy, cache: ForwardCache, u: np.ndarray, gu: np.ndarray) -> GradientSet:
    """Chain a gradient w.r.t. the action matrix back through softmax and the net."""
    u = u.reshape(-1, net.action_dim, net.action_dim)
    glogits = softmax_vjp(u, gu.reshape(u.shape)).reshape(u.shape[0], -1)
    return net.backward(cache, glogits)


def critic_forward(net: MlpPolicy, z, u, record: bool = True):
    if net.head != "linear":
        raise InvalidArgument("critic_forward needs a linear-head network")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    u = np.asarray(u, dtype=float).reshape(z.shape[0], -1)
    x = np.concatenate([z, u], axis=1)
    out, cache = net.forward(x, record=record)
    return out[:, 0], cache


def critic_input_grads(net: MlpPolicy, grads: GradientSet, n: int):
    """Split the critic's input gradient into (d/dz, d/du)."""
    gin = grads.input
    return gin[:, :n], gin[:, n:].reshape(-1, n, n)


def clip_by_norm(grads: GradientSet, max_norm: float) -> GradientSet:
    norm = grads.norm()
    if norm > max_norm > 0:
        return grads.scale(max_norm / norm)
    return grads


def sgd_step(net: MlpPolicy, grads: GradientSet, lr: float, ascent: bool = False) -> MlpPolicy:
    """Plain step theta <- theta -+ lr * grad, in place."""
    if not grads.is_finite():
        raise NonFiniteGradient("non-finite gradient; step skipped")
    sign = 1.0 if ascent else -1.0
    for p, g in zip(net.parameters(), grads.weights + grads.biases):
        p += sign * lr * g
    return net


class Adam:
    def __init__(self, net: MlpPolicy, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in net.parameters()]
        self.v = [np.zeros_like(p) for p in net.parameters()]
        self.t = 0

    def step(self, grads: GradientSet, ascent: bool = False) -> MlpPolicy:
        if not grads.is_finite():
            raise NonFiniteGradient("non-finite gradient; step skipped")
        if self.lr == 0:
            return self.net
        self.t += 1
        sign = 1.0 if ascent else -1.0
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.net.parameters(), grads.weights + grads.biases, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p += sign * self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return self.net


def optimizer_step(net: MlpPolicy, grads: GradientSet, lr: float, ascent: bool = False,
                   optimizer: Adam | None = None) -> MlpPolicy:
    if optimizer is not None:
        return optimizer.step(grads, ascent=ascent)
    return sgd_step(net, grads, lr, ascent=ascent)


def soft_update(target: MlpPolicy, source: MlpPolicy, alpha: float) -> MlpPolicy:
    """target <- alpha * source + (1 - alpha) * target."""
    for t, s in zip(target.parameters(), source.parameters()):
        t *= 1.0 - alpha
        t += alpha * s
    return target
