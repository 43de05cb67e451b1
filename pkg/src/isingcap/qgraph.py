"""Q-graphs, test distributions, and extraction of both from policy rollouts."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .channel import InvalidArgument

UNKNOWN = -1
CONSISTENCY_FLAG = 0.99


@dataclass
class QGraph:
    """Output-labelled graph; ``phi[q, y]`` is the successor of node q on output y.

    ``q_d`` (decoder knows the state) and ``q_s`` (tracked channel state) are
    optional per-node annotations; -1 means "not applicable".
    """

    phi: np.ndarray
    labels: list = field(default_factory=list)
    q_d: np.ndarray | None = None
    q_s: np.ndarray | None = None

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=int)
        if self.phi.ndim != 2:
            raise InvalidArgument("phi must be a |Q| x |Y| table")
        if np.any(self.phi >= self.n_nodes) or np.any(self.phi < UNKNOWN):
            raise InvalidArgument("phi refers to a node outside the graph")
        if not self.labels:
            self.labels = [str(q) for q in range(self.n_nodes)]

    @property
    def n_nodes(self) -> int:
        return self.phi.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.phi.shape[1]

    def is_total(self) -> bool:
        return bool(np.all(self.phi >= 0))

    def step(self, q: int, y: int) -> int:
        nxt = int(self.phi[q, y])
        if nxt == UNKNOWN:
            raise InvalidArgument(f"phi({q}, {y}) was never observed")
        return nxt

    def to_dot(self) -> str:
        lines = ["digraph qgraph {"]
        for q, label in enumerate(self.labels):
            lines.append(f'  {q} [label="{label}"];')
        for q in range(self.n_nodes):
            for y in range(self.n_outputs):
                if self.phi[q, y] >= 0:
                    lines.append(f'  {q} -> {self.phi[q, y]} [label="{y}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def phi_walk(g: QGraph, q0: int, outputs) -> int:
    """Node reached from q0 after the output sequence."""
    q = int(q0)
    if not 0 <= q < g.n_nodes:
        raise InvalidArgument(f"node {q0} not in graph")
    for y in outputs:
        if not 0 <= int(y) < g.n_outputs:
            raise InvalidArgument(f"output {y} out of range")
        q = g.step(q, int(y))
    return q


def check_test_distribution(T, g: QGraph, tol: float = 1e-12) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.shape != g.phi.shape:
        raise InvalidArgument(f"T has shape {T.shape}, expected {g.phi.shape}")
    if np.any(T < 0) or np.max(np.abs(T.sum(axis=1) - 1.0)) > tol * T.shape[1]:
        raise InvalidArgument("rows of T are not probability vectors")
    return T


def graph_to_json(g: QGraph, T=None) -> dict:
    out = {"nodes": g.labels, "phi": g.phi.tolist()}
    if T is not None:
        out["T"] = np.asarray(T).tolist()
    if g.q_d is not None:
        out["q_d"] = np.asarray(g.q_d).tolist()
    if g.q_s is not None:
        out["q_s"] = np.asarray(g.q_s).tolist()
    return out


def graph_from_json(data: dict):
    try:
        g = QGraph(np.asarray(data["phi"]), list(data.get("nodes", [])),
                   None if "q_d" not in data else np.asarray(data["q_d"]),
                   None if "q_s" not in data else np.asarray(data["q_s"]))
    except KeyError as exc:
        raise InvalidArgument(f"graph JSON lacks {exc}") from exc
    T = None if "T" not in data else check_test_distribution(data["T"], g, tol=1e-9)
    return g, T


def load_graph(path):
    with open(path) as fh:
        return graph_from_json(json.load(fh))


# -- the two parameterized Ising graphs ---------------------------------------

def _check_p(p: float) -> float:
    p = float(p)
    if not 0.0 < p < 1.0:
        raise InvalidArgument(f"p must lie in (0, 1) so that T stays strictly positive, got {p}")
    return p


def small_node(n: int, q_d: int, q_s: int) -> int:
    """Index of node (q_d, q_s): known-state nodes first, then unknown-state nodes."""
    return q_s if q_d == 1 else n + q_s


def ising_qgraph_small(n: int, p: float):
    """2n-node graph tracking (decoder knows state, last known state).

    From (0, q_s) or from (1, q_s) with y != q_s the walk moves to (1, y);
    from (1, q_s) with y == q_s it moves to (0, y).
    """
    if n < 2:
        raise InvalidArgument("alphabet size must be >= 2")
    p = _check_p(p)
    phi = np.empty((2 * n, n), dtype=int)
    T = np.empty((2 * n, n))
    q_d = np.empty(2 * n, dtype=int)
    q_s = np.empty(2 * n, dtype=int)
    labels = []
    for d in (1, 0):
        for k in range(n):
            q = small_node(n, d, k)
            q_d[q], q_s[q] = d, k
            labels.append(f"({d},{k})")
            for y in range(n):
                phi[q, y] = small_node(n, 0, y) if (d == 1 and y == k) else small_node(n, 1, y)
            if d == 1:
                T[q] = (1 - p) / (2 * (n - 1))
                T[q, k] = (1 + p) / 2
            else:
                T[q] = (1 - p) / ((n - 1) * (1 + p))
                T[q, k] = 2 * p / (1 + p)
    return QGraph(phi, labels, q_d, q_s), T


def large_node_unknown() -> int:
    return 0


def large_node_known(k: int) -> int:
    return 1 + k


def large_node_partial(j: int, n: int) -> int:
    return n + 1 + j


def ising_qgraph_large(n: int, p: float):
    """(n+3)-node graph: one state-unknown node, n state-known nodes, and two
    extra nodes tracking states 0 and 1.

    Transitions: the unknown node moves to known(y); any other node with
    tracked state k moves to the unknown node on y == k, and otherwise to the
    node tracking y (the extra nodes are used when leaving a known(k), k >= 2,
    with y in {0, 1}).
    """
    if n < 3:
        raise InvalidArgument("large-alphabet graph needs alphabet size >= 3")
    p = _check_p(p)
    size = n + 3
    phi = np.empty((size, n), dtype=int)
    q_s = np.empty(size, dtype=int)
    q_d = np.zeros(size, dtype=int)
    T = np.empty((size, n))
    u = large_node_unknown()
    q_s[u] = -1
    phi[u] = [large_node_known(y) for y in range(n)]
    T[u] = 1.0 / n
    labels = ["1"]
    for k in range(n):
        q = large_node_known(k)
        q_s[q] = k
        q_d[q] = 1
        labels.append(f"{q + 1}:s={k}")
    for j in (0, 1):
        q = large_node_partial(j, n)
        q_s[q] = j
        labels.append(f"{q + 1}:s~{j}")
    for q in range(1, size):
        k = q_s[q]
        for y in range(n):
            if y == k:
                phi[q, y] = u
            elif q <= n and k >= 2 and y in (0, 1):
                phi[q, y] = large_node_partial(y, n)
            else:
                phi[q, y] = large_node_known(y)
        T[q] = (1 - p) / (n - 1)
        T[q, k] = p
    return QGraph(phi, labels, q_d, q_s), T


# -- structure extraction -------------------------------------------------------

@dataclass
class ClusterResult:
    centers: np.ndarray
    assignments: np.ndarray
    inertia: float
    requested_k: int

    @property
    def k(self) -> int:
        return len(self.centers)


def cluster_states(trace, k: int, seed: int = 0, restarts: int = 10) -> ClusterResult:
    """k-means (k-means++ seeding) over belief vectors.

    When fewer than k distinct points exist, k is reduced to that number.
    """
    from sklearn.cluster import KMeans

    X = np.asarray(trace, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise InvalidArgument("trace must be a non-empty (N, |S|) array")
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    distinct = len(np.unique(np.round(X, 12), axis=0))
    k_eff = min(k, distinct)
    km = KMeans(n_clusters=k_eff, init="k-means++", n_init=min(restarts, 100), random_state=seed)
    labels = km.fit_predict(X)
    return ClusterResult(km.cluster_centers_, labels, float(km.inertia_), k)


def elbow_k(trace, k_max: int = 12, seed: int = 0, drop: float = 1e-3) -> int:
    """Smallest k leaving at most ``drop`` of the k = 1 SSE unexplained."""
    X = np.asarray(trace, dtype=float)
    base = cluster_states(X, 1, seed).inertia
    if base <= 0:
        return 1
    for k in range(2, k_max + 1):
        res = cluster_states(X, k, seed)
        if res.k < k or res.inertia <= drop * base:
            return res.k
    return k_max


@dataclass
class ExtractionReport:
    centers: np.ndarray
    occupancy: np.ndarray
    graph: QGraph
    consistency: np.ndarray   # fraction of observed transitions agreeing with phi; nan if unseen
    T: np.ndarray             # empirical output frequencies per node
    visits: np.ndarray        # transitions observed out of each node
    counts: np.ndarray        # raw (q, y) counts

    def flagged_edges(self, threshold: float = CONSISTENCY_FLAG):
        return [(int(q), int(y)) for q, y in zip(*np.nonzero(self.consistency < threshold))]

    def unknown_edges(self):
        return [(int(q), int(y)) for q, y in zip(*np.nonzero(self.graph.phi == UNKNOWN))]

    def zero_count_entries(self):
        return [(int(q), int(y)) for q, y in zip(*np.nonzero(self.counts == 0))]

    def usable_for_duality(self) -> bool:
        return self.graph.is_total() and not self.zero_count_entries()

    def to_json(self) -> dict:
        out = graph_to_json(self.graph, self.T)
        out.update({
            "centers": self.centers.tolist(),
            "occupancy": self.occupancy.tolist(),
            "consistency": np.where(np.isnan(self.consistency), None, self.consistency).tolist(),
            "visits": self.visits.tolist(),
            "flagged_edges": self.flagged_edges(),
            "zero_count_entries": self.zero_count_entries(),
        })
        return out


def assign_nearest(beliefs, centers, chunk: int = 1 << 16) -> np.ndarray:
    beliefs = np.asarray(beliefs, dtype=float)
    centers = np.asarray(centers, dtype=float)
    out = np.empty(len(beliefs), dtype=int)
    for i in range(0, len(beliefs), chunk):
        d = ((beliefs[i:i + chunk, None, :] - centers[None]) ** 2).sum(axis=-1)
        out[i:i + chunk] = d.argmin(axis=1)
    return out


def induce_qgraph(beliefs, outputs, centers, n_outputs: int | None = None) -> ExtractionReport:
    """Map beliefs to nearest centers and tally the induced graph.

    ``beliefs[t]`` is z_{t-1} and ``outputs[t]`` the output y_t observed from
    it, so the transition recorded at step t is (q_t, y_t) -> q_{t+1}.
    Several independent chains may be passed as (steps, chains, |S|) beliefs
    with (steps, chains) outputs; transitions never cross chains.
    """
    beliefs = np.asarray(beliefs, dtype=float)
    outputs = np.asarray(outputs, dtype=int)
    centers = np.asarray(centers, dtype=float)
    if beliefs.shape[:-1] != outputs.shape:
        raise InvalidArgument("beliefs and outputs differ in length")
    if outputs.ndim == 1:
        beliefs, outputs = beliefs[:, None], outputs[:, None]
    n_y = int(n_outputs if n_outputs is not None else outputs.max() + 1)
    k = len(centers)
    steps, chains = outputs.shape
    nodes = assign_nearest(beliefs.reshape(-1, beliefs.shape[-1]), centers).reshape(steps, chains)
    counts = np.zeros((k, n_y), dtype=int)
    np.add.at(counts, (nodes, outputs), 1)
    # successor tallies keyed by (q, y, q') with one vectorized count
    keys = (nodes[:-1] * n_y + outputs[:-1]) * k + nodes[1:]
    uniq, hits = np.unique(keys, return_counts=True)
    successors = defaultdict(Counter)
    for key, c in zip(uniq.tolist(), hits.tolist()):
        qy, q_next = divmod(key, k)
        successors[divmod(qy, n_y)][q_next] += c
    phi = np.full((k, n_y), UNKNOWN, dtype=int)
    consistency = np.full((k, n_y), np.nan)
    for (q, y), ctr in successors.items():
        best, hits = ctr.most_common(1)[0]
        phi[q, y] = best
        consistency[q, y] = hits / sum(ctr.values())
    visits = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        T = np.where(visits[:, None] > 0, counts / np.maximum(visits[:, None], 1), 0.0)
    occupancy = np.bincount(nodes.ravel(), minlength=k)
    return ExtractionReport(centers, occupancy, QGraph(phi), consistency, T, visits, counts)


def walk_graph(g: QGraph, T, q0: int, steps: int, rng: np.random.Generator):
    """Sample an output sequence from a graph driven by its own test distribution."""
    T = np.asarray(T)
    nodes = np.empty(steps, dtype=int)
    outputs = np.empty(steps, dtype=int)
    q = q0
    cdf = np.cumsum(T, axis=1)
    draws = rng.random(steps)
    for t in range(steps):
        nodes[t] = q
        y = min(int(np.searchsorted(cdf[q], draws[t] * cdf[q, -1], side="right")), T.shape[1] - 1)
        outputs[t] = y
        q = g.phi[q, y]
    return nodes, outputs
