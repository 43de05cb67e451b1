"""Tightness check for the small-alphabet Ising solution.

The structured input distribution repeats the known state with probability p
(otherwise picks another symbol uniformly) and re-sends the state when the
decoder has lost track of it.  On the 2n-node graph its output law must equal
the test distribution, and its single-letter rate must meet the upper bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .belief import bcjr_update
from .channel import InvalidArgument, UnifilarChannel
from .qgraph import QGraph

CORNER_TOL = 1e-9


@dataclass
class StructuredPolicy:
    n: int
    p: float

    def __post_init__(self):
        if self.n < 2:
            raise InvalidArgument("alphabet size must be >= 2")
        if not 0.0 <= self.p <= 1.0:
            raise InvalidArgument("p must lie in [0, 1]")

    def known_row(self, s: int) -> np.ndarray:
        row = np.full(self.n, (1 - self.p) / (self.n - 1))
        row[s] = self.p
        return row

    def table(self, g: QGraph) -> np.ndarray:
        """u[s, q, x] = p(x | s, q).  The unreachable (q_d=1, q_s != s) rows repeat s."""
        n = self.n
        U = np.zeros((n, g.n_nodes, n))
        for q in range(g.n_nodes):
            for s in range(n):
                if g.q_d[q] == 1 and g.q_s[q] == s:
                    U[s, q] = self.known_row(s)
                else:
                    U[s, q, s] = 1.0
        return U

    def __call__(self, z: np.ndarray) -> np.ndarray:
        """Belief-level policy: the same rule applied to a batch of beliefs."""
        z = np.atleast_2d(z)
        u = np.broadcast_to(np.eye(self.n), (len(z), self.n, self.n)).copy()
        b = np.nonzero(z.max(axis=1) > 1 - CORNER_TOL)[0]
        k = z[b].argmax(axis=1)
        rows = np.full((len(b), self.n), (1 - self.p) / (self.n - 1))
        rows[np.arange(len(b)), k] = self.p
        u[b, k] = rows
        return u


def node_beliefs(g: QGraph, p: float) -> np.ndarray:
    """Belief attached to each node: a corner when q_d = 1, otherwise mass
    2p/(1+p) on q_s and the rest spread evenly."""
    n = g.n_outputs
    Z = np.empty((g.n_nodes, n))
    for q in range(g.n_nodes):
        k = g.q_s[q]
        if g.q_d[q] == 1:
            Z[q] = 0.0
            Z[q, k] = 1.0
        else:
            Z[q] = (1 - p) / ((1 + p) * (n - 1))
            Z[q, k] = 2 * p / (1 + p)
    return Z


@dataclass
class InvarianceReport:
    invariant: bool
    max_output_error: float
    max_closure_error: float
    failures: list = field(default_factory=list)


def check_bcjr_invariance(ch: UnifilarChannel, g: QGraph, T, pol: StructuredPolicy,
                          tol: float = 1e-12) -> InvarianceReport:
    """Compare the induced output law at every node with T, and check that the
    belief update maps each node's belief onto its successor's."""
    if g.q_d is None or g.q_s is None:
        raise InvalidArgument("graph lacks (q_d, q_s) annotations")
    T = np.asarray(T)
    Z = node_beliefs(g, pol.p)
    U = pol.table(g)
    failures = []
    out_err = clo_err = 0.0
    for q in range(g.n_nodes):
        u = U[:, q, :]
        py = np.einsum("s,sx,xsy->y", Z[q], u, ch.kernel)
        for y in range(ch.n):
            err = abs(py[y] - T[q, y])
            out_err = max(out_err, err)
            if err > tol:
                failures.append(("output", q, y, float(err)))
            if py[y] > 0:
                znext = bcjr_update(ch, Z[q], u, y)
                cerr = float(np.max(np.abs(znext - Z[g.phi[q, y]])))
                clo_err = max(clo_err, cerr)
                if cerr > tol:
                    failures.append(("closure", q, y, cerr))
    return InvarianceReport(not failures, out_err, clo_err, failures)


def chain_matrix(ch: UnifilarChannel, g: QGraph, U: np.ndarray) -> np.ndarray:
    """Transition matrix of the (s, q) chain, state index s * |Q| + q."""
    n, nq = ch.n, g.n_nodes
    P = np.zeros((n * nq, n * nq))
    for s in range(n):
        for q in range(nq):
            for x in range(n):
                if U[s, q, x] == 0:
                    continue
                for y in range(ch.n):
                    w = U[s, q, x] * ch.kernel[x, s, y]
                    if w > 0:
                        P[s * nq + q, ch.state_fn[x, s, y] * nq + g.phi[q, y]] += w
    return P


def stationary_distribution(ch: UnifilarChannel, g: QGraph, pol: StructuredPolicy,
                            start: tuple = (0, 0), tol: float = 1e-15,
                            max_iters: int = 1_000_000) -> np.ndarray:
    """pi(s, q) by lazy power iteration started at state ``start``.

    Starting inside the recurrent class means transient states keep zero mass.
    """
    n, nq = ch.n, g.n_nodes
    P = chain_matrix(ch, g, pol.table(g))
    lazy = 0.5 * (P + np.eye(len(P)))
    pi = np.zeros(len(P))
    pi[start[0] * nq + start[1]] = 1.0
    for _ in range(max_iters):
        nxt = pi @ lazy
        if np.abs(nxt - pi).sum() < tol:
            return nxt.reshape(n, nq)
        pi = nxt
    raise ArithmeticError("power iteration did not converge")


def stationary_closed_form(g: QGraph, p: float) -> np.ndarray:
    n = g.n_outputs
    pi = np.empty((n, g.n_nodes))
    for s in range(n):
        for q in range(g.n_nodes):
            same = g.q_s[q] == s
            if g.q_d[q] == 1:
                pi[s, q] = 2 / (n * (p + 3)) if same else 0.0
            else:
                pi[s, q] = 2 * p / (n * (p + 3)) if same else (1 - p) / (n * (n - 1) * (p + 3))
    return pi


def _entropy(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(p > 0, p * np.log2(p), 0.0).sum(axis=-1)


def conditional_entropies(ch: UnifilarChannel, g: QGraph, pol: StructuredPolicy, pi: np.ndarray):
    """(H(Y|Q), H(Y|X,S)) under the stationary joint pi(s,q) u(x|s,q) p(y|x,s)."""
    U = pol.table(g)
    joint = np.einsum("sq,sqx,xsy->qy", pi, U, ch.kernel)
    pq = joint.sum(axis=1)
    cond = np.divide(joint, pq[:, None], out=np.zeros_like(joint), where=pq[:, None] > 0)
    h_yq = float(np.sum(pq * _entropy(cond)))
    hxs = ch.output_entropies()  # (x, s)
    h_yxs = float(np.einsum("sq,sqx,xs->", pi, U, hxs))
    return h_yq, h_yxs


def single_letter_rate(ch: UnifilarChannel, g: QGraph, pol: StructuredPolicy, pi: np.ndarray) -> float:
    """I(X,S;Y|Q) = H(Y|Q) - H(Y|X,S)."""
    h_yq, h_yxs = conditional_entropies(ch, g, pol, pi)
    return h_yq - h_yxs


def verify(n: int, p: float | None = None) -> dict:
    """Full tightness pipeline for alphabet n at the capacity-achieving p."""
    from .channel import ising_channel
    from .duality import quartic_root, rho_small_candidate
    from .qgraph import ising_qgraph_small

    p = quartic_root(n) if p is None else p
    ch = ising_channel(n)
    g, T = ising_qgraph_small(n, p)
    pol = StructuredPolicy(n, p)
    inv = check_bcjr_invariance(ch, g, T, pol)
    pi = stationary_distribution(ch, g, pol)
    rate = single_letter_rate(ch, g, pol, pi)
    rho = rho_small_candidate(n)
    return {
        "alphabet": n,
        "p": p,
        "bcjr_invariant": inv.invariant,
        "max_output_error": inv.max_output_error,
        "max_closure_error": inv.max_closure_error,
        "rate": rate,
        "rho": rho,
        "gap": abs(rho - rate),
        "pi_error": float(np.max(np.abs(pi - stationary_closed_form(g, p)))),
        "upper_bound_valid": rho < 2,
    }
