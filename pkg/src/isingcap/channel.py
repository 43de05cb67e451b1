"""Unifilar finite-state channels and the arbitrary-alphabet Ising channel."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ZERO_TOL = 1e-12


class InvalidArgument(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class UnifilarChannel:
    """Channel with |X| = |Y| = |S| = n.

    ``kernel[x, s, y]`` is p(y|x,s) and ``state_fn[x, s, y]`` the next state
    f(x, s, y).  Entries of ``state_fn`` on zero-probability triples are
    ignored (conventionally set to -1).
    """

    alphabet_size: int
    kernel: np.ndarray
    state_fn: np.ndarray
    name: str = "custom"
    _onehot: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.alphabet_size
        if n < 1:
            raise InvalidArgument(f"alphabet_size must be positive, got {n}")
        kernel = np.array(self.kernel, dtype=float).reshape(n, n, n)
        state_fn = np.array(self.state_fn, dtype=int).reshape(n, n, n)
        if np.any(kernel < -ZERO_TOL):
            raise InvalidArgument("kernel has negative entries")
        kernel[kernel < ZERO_TOL] = 0.0
        sums = kernel.sum(axis=2)
        if np.max(np.abs(sums - 1.0)) > ZERO_TOL * n:
            bad = np.unravel_index(np.argmax(np.abs(sums - 1.0)), sums.shape)
            raise InvalidArgument(f"kernel row p(.|x={bad[0]},s={bad[1]}) sums to {sums[bad]}")
        support = kernel > 0
        if np.any((state_fn[support] < 0) | (state_fn[support] >= n)):
            raise InvalidArgument("state_fn undefined on a positive-probability (x,s,y)")
        state_fn = np.where(support, state_fn, -1)
        kernel.setflags(write=False)
        state_fn.setflags(write=False)
        # onehot[x, s, y, s'] = 1[f(x,s,y) = s'] on the support; used by the BCJR update
        onehot = np.zeros((n, n, n, n))
        xs, ss, ys = np.nonzero(support)
        onehot[xs, ss, ys, state_fn[xs, ss, ys]] = 1.0
        onehot.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "state_fn", state_fn)
        object.__setattr__(self, "_onehot", onehot)

    @property
    def n(self) -> int:
        return self.alphabet_size

    @property
    def transition_onehot(self) -> np.ndarray:
        return self._onehot

    def output_entropies(self) -> np.ndarray:
        """H(Y | x, s) in bits, shape (x, s)."""
        k = self.kernel
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(k > 0, -k * np.log2(k), 0.0)
        return terms.sum(axis=2)

    def to_json(self) -> dict:
        return {
            "alphabet_size": self.n,
            "kernel": self.kernel.ravel().tolist(),
            "state_fn": self.state_fn.ravel().tolist(),
        }


def ising_channel(alphabet_size: int) -> UnifilarChannel:
    """Y = X or Y = S with probability 1/2 each; the next state is X."""
    n = int(alphabet_size)
    if n < 2:
        raise InvalidArgument(f"Ising channel needs alphabet_size >= 2, got {alphabet_size}")
    kernel = np.zeros((n, n, n))
    idx = np.arange(n)
    for x in range(n):
        kernel[x, :, x] += 0.5
        kernel[x, idx, idx] += 0.5
    state_fn = np.broadcast_to(idx[:, None, None], (n, n, n))
    return UnifilarChannel(n, kernel, state_fn, name=f"ising:{n}")


def _check_symbol(ch: UnifilarChannel, value, label: str) -> int:
    v = int(value)
    if v != value or not 0 <= v < ch.n:
        raise InvalidArgument(f"{label}={value!r} outside alphabet of size {ch.n}")
    return v


def transition_prob(ch: UnifilarChannel, x: int, s: int) -> np.ndarray:
    x = _check_symbol(ch, x, "x")
    s = _check_symbol(ch, s, "s")
    return ch.kernel[x, s].copy()


def next_state(ch: UnifilarChannel, x: int, s: int, y: int) -> int:
    x = _check_symbol(ch, x, "x")
    s = _check_symbol(ch, s, "s")
    y = _check_symbol(ch, y, "y")
    if ch.kernel[x, s, y] <= 0:
        raise InvalidArgument(f"p(y={y}|x={x},s={s}) = 0; next state undefined")
    return int(ch.state_fn[x, s, y])


def channel_from_json(spec: dict) -> UnifilarChannel:
    try:
        n = int(spec["alphabet_size"])
        return UnifilarChannel(n, spec["kernel"], spec["state_fn"], name=spec.get("name", "custom"))
    except (KeyError, TypeError) as exc:
        raise InvalidArgument(f"malformed channel spec: {exc}") from exc


def load_channel(ref: str) -> UnifilarChannel:
    """Resolve ``ising:N`` or a path to a JSON channel spec."""
    if ref.startswith("ising:"):
        try:
            n = int(ref.split(":", 1)[1])
        except ValueError as exc:
            raise InvalidArgument(f"bad channel alias {ref!r}") from exc
        return ising_channel(n)
    path = Path(ref)
    if not path.exists():
        raise InvalidArgument(f"channel {ref!r} is neither 'ising:N' nor an existing file")
    return channel_from_json(json.loads(path.read_text()))
