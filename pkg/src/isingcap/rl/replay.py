"""Replay buffer that groups transitions by the belief they start from."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    z_prev: np.ndarray
    u: np.ndarray
    r: float
    z_next: np.ndarray


class ClusteredReplayBuffer:
    """Transitions are filed under the nearest cluster center (max-norm) when
    closer than ``threshold``; otherwise they found a new cluster centered at
    their starting belief.  Each cluster is a FIFO of at most ``capacity``.
    """

    def __init__(self, n: int, threshold: float = 0.1, capacity: int = 10_000):
        self.n = n
        self.threshold = threshold
        self.capacity = capacity
        self.centers = np.empty((0, n))
        self.clusters: list[deque] = []

    def __len__(self) -> int:
        return sum(len(c) for c in self.clusters)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def nearest(self, z: np.ndarray):
        if not self.clusters:
            return -1, np.inf
        d = np.abs(self.centers - z).max(axis=1)
        k = int(d.argmin())
        return k, float(d[k])

    def insert(self, tr: Transition) -> int:
        """File ``tr``; returns the index of the receiving cluster."""
        k, dist = self.nearest(tr.z_prev)
        if dist < self.threshold:
            self.clusters[k].append(tr)
            return k
        self.centers = np.vstack([self.centers, tr.z_prev[None]])
        self.clusters.append(deque([tr], maxlen=self.capacity))
        return len(self.clusters) - 1

    def sample(self, count: int, rng: np.random.Generator) -> list[Transition]:
        """Pick a cluster uniformly, then a member uniformly; with replacement."""
        if not self.clusters:
            raise IndexError("sampling from an empty replay buffer")
        picks = rng.integers(0, len(self.clusters), size=count)
        out = []
        for k in picks:
            c = self.clusters[k]
            out.append(c[int(rng.integers(0, len(c)))])
        return out

    def audit(self) -> bool:
        """Every member lies within threshold of its center or founded the cluster."""
        for center, members in zip(self.centers, self.clusters):
            for tr in members:
                d = np.abs(tr.z_prev - center).max()
                if d >= self.threshold and not np.array_equal(tr.z_prev, center):
                    return False
        return True


def replay_insert(buf: ClusteredReplayBuffer, tr: Transition) -> ClusteredReplayBuffer:
    buf.insert(tr)
    return buf


def replay_sample(buf: ClusteredReplayBuffer, count: int, rng: np.random.Generator) -> list[Transition]:
    return buf.sample(count, rng)


def stack(batch: list[Transition]):
    """Arrays (z_prev, u, r, z_next) for a list of transitions."""
    return (np.stack([t.z_prev for t in batch]), np.stack([t.u for t in batch]),
            np.array([t.r for t in batch]), np.stack([t.z_next for t in batch]))
