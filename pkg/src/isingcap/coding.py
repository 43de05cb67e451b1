"""Zero-error feedback coding schemes for the Ising channel.

Message bits are not mapped to symbols here; the symbol stream is sampled
directly from its source law and rates are computed from its entropy rate.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .channel import InvalidArgument, UnifilarChannel
from .duality import h2


class DecodingError(AssertionError):
    pass


@dataclass
class SymbolStream:
    symbols: np.ndarray
    alphabet: int
    p: float | None = None
    entropy_per_symbol: float = 0.0


@dataclass
class CodeRunStats:
    symbols: int
    uses: int
    decoded: np.ndarray
    errors: int
    uses_per_symbol_samples: np.ndarray = field(repr=False, default=None)
    entropy_per_symbol: float = 0.0
    overhead_uses: int = 0
    trace: list | None = field(repr=False, default=None)
    notes: list = field(default_factory=list)

    @property
    def uses_per_symbol(self) -> float:
        return self.uses / self.symbols

    @property
    def rate(self) -> float:
        return self.symbols * self.entropy_per_symbol / self.uses

    def stderr_uses(self) -> float:
        """Standard error of the mean channel uses per symbol."""
        samples = self.uses_per_symbol_samples
        return float(samples.std(ddof=1) / np.sqrt(len(samples)))

    def summary(self) -> dict:
        return {
            "symbols": self.symbols,
            "channel_uses": self.uses,
            "overhead_uses": self.overhead_uses,
            "uses_per_symbol": self.uses_per_symbol,
            "uses_per_symbol_stderr": self.stderr_uses(),
            "entropy_per_symbol": self.entropy_per_symbol,
            "rate": self.rate,
            "errors": self.errors,
            "notes": self.notes,
        }


def markov_source(n: int, p: float, m: int, rng: np.random.Generator) -> SymbolStream:
    """nu_i repeats nu_{i-1} w.p. p, else is uniform over the other n-1 symbols; nu_0 = 0."""
    if not 0.0 <= p <= 1.0:
        raise InvalidArgument("p must lie in [0, 1]")
    if m < 1 or n < 2:
        raise InvalidArgument("need m >= 1 and n >= 2")
    repeat = rng.random(m) < p
    # a jump by k in 1..n-1 (mod n) is uniform over the other symbols
    jumps = np.where(repeat, 0, rng.integers(1, n, size=m))
    symbols = np.cumsum(jumps) % n
    entropy = h2(p) + (1 - p) * np.log2(n - 1)
    return SymbolStream(symbols.astype(np.int64), n, p, float(entropy))


def empirical_entropy_rate(stream: SymbolStream) -> float:
    """Plug-in estimate of H(nu_i | nu_{i-1}) in bits."""
    nu = np.concatenate([[0], stream.symbols])
    n = stream.alphabet
    counts = np.zeros((n, n))
    np.add.at(counts, (nu[:-1], nu[1:]), 1)
    rows = counts.sum(axis=1, keepdims=True)
    cond = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(cond > 0, cond * np.log2(cond), 0.0).sum(axis=1)
    return float((rows[:, 0] / rows.sum()) @ h)


class IsingLink:
    """Ising channel with an explicit state: y = x or previous x w.p. 1/2 each."""

    def __init__(self, rng: np.random.Generator, state: int = 0, block: int = 1 << 16):
        self.rng = rng
        self.state = state
        self.block = block
        self._coins = rng.random(block) < 0.5
        self._i = 0
        self.uses = 0

    def send(self, x: int) -> int:
        if self._i == self.block:
            self._coins = self.rng.random(self.block) < 0.5
            self._i = 0
        current = self._coins[self._i]
        self._i += 1
        y = x if current else self.state
        self.state = x
        self.uses += 1
        return y


def _require_ising(ch: UnifilarChannel | None, n: int) -> None:
    if ch is None:
        return
    if ch.n != n or not ch.name.startswith("ising:"):
        raise InvalidArgument("these schemes are defined for the Ising channel of the stream's alphabet")


def simulate_small_scheme(ch: UnifilarChannel | None, stream: SymbolStream, rng: np.random.Generator,
                          keep_trace: bool = False) -> CodeRunStats:
    """Send each symbol, re-send it when the output equals the previous state.

    The decoder keeps y_t when it differs from y_{t-1}; otherwise it drops y_t
    and keeps y_{t+1}.
    """
    n = stream.alphabet
    _require_ising(ch, n)
    link = IsingLink(rng, state=int(rng.integers(n)))
    # initialization: symbol 0 twice fixes the state
    link.send(0)
    y_prev = link.send(0)
    outputs = []
    per_symbol = np.empty(len(stream.symbols), dtype=np.int64)
    trace = [] if keep_trace else None
    for i, nu in enumerate(stream.symbols.tolist()):
        s_prev = link.state
        y = link.send(nu)
        outputs.append(y)
        used = 1
        if y == s_prev:
            outputs.append(link.send(nu))
            used = 2
        per_symbol[i] = used
        if keep_trace:
            trace.append((i, nu, used))
    decoded = decode_small(outputs, y_prev)
    return _finish(stream, decoded, per_symbol, 2, trace)


def decode_small(outputs, y0: int) -> np.ndarray:
    decoded = []
    prev = y0
    skip = False
    for y in outputs:
        if skip:
            decoded.append(y)
            skip = False
        elif y != prev:
            decoded.append(y)
        else:
            skip = True
        prev = y
    return np.asarray(decoded, dtype=np.int64)


def _finish(stream, decoded, per_symbol, overhead, trace, notes=None) -> CodeRunStats:
    """Payload uses are the per-symbol send counts; init and padding are overhead."""
    src = stream.symbols
    m = len(src)
    if len(decoded) < m:
        errors = int(np.sum(decoded != src[:len(decoded)])) + m - len(decoded)
    else:
        errors = int(np.sum(decoded[:m] != src))
    stats = CodeRunStats(m, int(per_symbol.sum()), decoded[:m], errors, per_symbol.astype(float),
                         stream.entropy_per_symbol, int(overhead), trace, notes or [])
    if errors:
        raise DecodingError(f"{errors} decoding errors in a zero-error scheme")
    return stats


def rate_small(n: int, p: float) -> float:
    """Entropy rate H2(p) + (1-p) log(n-1) over expected uses 2p + 1.5(1-p)."""
    if not 0.0 <= p <= 1.0:
        raise InvalidArgument("p must lie in [0, 1]")
    return 2.0 * (h2(p) + (1 - p) * np.log2(n - 1)) / (p + 3)


def partition(n: int):
    """Split range(n) into two halves; odd n drops the last symbol."""
    half = n // 2
    return list(range(half)), list(range(half, 2 * half))


def partition_source(n: int, m: int, rng: np.random.Generator) -> SymbolStream:
    """Alternate uniform draws from the two halves, starting with the first."""
    if n < 4:
        raise InvalidArgument("partition scheme needs |X| >= 4")
    a, b = partition(n)
    half = len(a)
    draws = rng.integers(0, half, size=m)
    symbols = np.where(np.arange(m) % 2 == 0, draws, draws + half)
    return SymbolStream(symbols.astype(np.int64), n, None, float(np.log2(half)))


def simulate_asymp_scheme(ch: UnifilarChannel | None, stream: SymbolStream, rng: np.random.Generator,
                          keep_trace: bool = False) -> CodeRunStats:
    """Partition scheme: slots alternate between the halves of the alphabet.

    When y_t = nu_t and y_{t-1} = nu_{t-2}, nu_{t-1} never reached the
    decoder, so it is pushed back to the front of its half's queue and is
    re-sent two slots later.  The decoder tells whether y_t is the current
    or the previous input from the half it belongs to; it keeps y_t unless
    y_t repeats the input already received at t-1.  Once a queue is empty
    the encoder pads its slots with a terminator symbol until every payload
    symbol has been delivered.
    """
    n = stream.alphabet
    _require_ising(ch, n)
    a, b = partition(n)
    half = len(a)
    src = stream.symbols
    m = len(src)
    # queues hold payload indices; slot t draws from half t % 2
    queues = (deque(range(0, m, 2)), deque(range(1, m, 2)))
    pending = (len(queues[0]), len(queues[1]))
    terminators = (a[0], b[0])
    link = IsingLink(rng, state=int(rng.integers(n)))
    # initialization: a second-half symbol twice; slot 0 then belongs to the first half
    link.send(b[0])
    link.send(b[0])
    received = ([], [])
    sends = np.zeros(m, dtype=np.int64)
    prev_idx = -1          # payload index sent at t-1 (-1 for init/terminator)
    prev_current = True    # whether y_{t-1} was the input at t-1
    t = 0
    pad = 0
    trace = [] if keep_trace else None
    while len(received[0]) < pending[0] or len(received[1]) < pending[1]:
        side = t % 2
        if queues[side]:
            idx = queues[side].popleft()
            nu = int(src[idx])
            sends[idx] += 1
        else:
            idx, nu = -1, terminators[side]
            pad += 1
        y = link.send(nu)
        current = (y >= half) == (side == 1)
        if current or not prev_current:
            received[int(y >= half)].append(y)
        if current and not prev_current and prev_idx >= 0:
            # nu_{t-1} never reached the decoder
            queues[1 - side].appendleft(prev_idx)
        if keep_trace:
            trace.append((t, nu, y, int(current)))
        prev_idx, prev_current = idx, current
        t += 1
        if t > 10 * m + 100:
            raise DecodingError("encoder failed to terminate")
    decoded = np.empty(m, dtype=np.int64)
    decoded[0::2] = received[0][:pending[0]]
    decoded[1::2] = received[1][:pending[1]]
    notes = [f"terminator slots: {pad}"]
    if n % 2:
        notes.append(f"odd alphabet: symbol {n - 1} unused; entropy uses log2({half}) "
                     f"while the closed form uses log2({n}/2)")
    return _finish(stream, decoded, sends, 2 + pad, trace, notes)


def rate_asymp(n: int) -> float:
    if n <= 2:
        raise InvalidArgument("rate formula holds for |X| > 2")
    return float(0.75 * np.log2(n / 2))


def crossover_alphabet(limit: int = 1 << 12) -> int:
    """Smallest n from which the partition scheme beats the best small-scheme rate."""
    from .duality import maximize_small_rate

    last_bad = 2
    for n in range(3, limit + 1):
        if rate_asymp(n) <= maximize_small_rate(n)[0]:
            last_bad = n
    return last_bad + 1
