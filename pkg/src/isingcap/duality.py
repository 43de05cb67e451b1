"""Duality upper bound: finite MDP over (channel state, graph node), solved by
relative value iteration, plus the closed-form Ising capacity and bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect, minimize_scalar

from .channel import InvalidArgument, UnifilarChannel
from .qgraph import QGraph, check_test_distribution, ising_qgraph_large, ising_qgraph_small, small_node

SMALL_MAX = 8


class InfiniteReward(ValueError):
    pass


class InternalError(RuntimeError):
    pass


def h2(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


@dataclass
class DualityMdp:
    """States (s, q) flattened as s * |Q| + q; actions are input symbols."""

    channel: UnifilarChannel
    graph: QGraph
    T: np.ndarray
    rewards: np.ndarray     # R[s, q, x], bits
    next_state: np.ndarray  # index of (f(x,s,y), phi(q,y)), shape (x, s, q, y)
    probs: np.ndarray       # p(y|x,s) broadcast to (x, s, q, y)

    @property
    def n_states(self) -> int:
        return self.channel.n * self.graph.n_nodes

    @property
    def n_actions(self) -> int:
        return self.channel.n

    def index(self, s: int, q: int) -> int:
        return s * self.graph.n_nodes + q

    def q_values(self, V: np.ndarray) -> np.ndarray:
        """R(s,q,x) + sum_y p(y|x,s) V(s', q'), shape (s, q, x)."""
        cont = (self.probs * V[self.next_state]).sum(axis=-1)  # (x, s, q)
        return self.rewards + np.transpose(cont, (1, 2, 0))


def build_duality_mdp(ch: UnifilarChannel, g: QGraph, T) -> DualityMdp:
    """Rewards D_KL(p(.|x,s) || T(.|q)) for every (s, q, x)."""
    T = check_test_distribution(T, g, tol=1e-9)
    if not g.is_total():
        raise InvalidArgument("graph has undefined transitions")
    if g.n_outputs != ch.n:
        raise InvalidArgument("graph output alphabet does not match the channel")
    n, nq = ch.n, g.n_nodes
    K = ch.kernel  # (x, s, y)
    support = K > 0
    # any channel mass on an output the test distribution excludes -> infinite reward
    bad = support[:, :, None, :] & (T[None, None, :, :] <= 0)
    if np.any(bad):
        x, s, q, y = (int(v) for v in np.argwhere(bad)[0])
        raise InfiniteReward(f"T(y={y}|q={q}) = 0 but p(y|x={x},s={s}) > 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        logratio = np.where(support[:, :, None, :],
                            np.log2(np.where(support, K, 1.0))[:, :, None, :]
                            - np.log2(np.where(T > 0, T, 1.0))[None, None, :, :], 0.0)
    kl = (K[:, :, None, :] * logratio).sum(axis=-1)  # (x, s, q)
    rewards = np.transpose(kl, (1, 2, 0)).copy()
    s_next = np.where(support, ch.state_fn, 0)  # (x, s, y)
    next_state = s_next[:, :, None, :] * nq + g.phi[None, None, :, :]
    probs = np.broadcast_to(K[:, :, None, :], (n, n, nq, n))
    return DualityMdp(ch, g, T, rewards, next_state, probs)


@dataclass
class ValueSolution:
    rho: float
    V: np.ndarray              # (s, q)
    greedy_policy: np.ndarray  # (s, q) -> x
    converged: bool = True
    iterations: int = 0
    span: float = 0.0
    residual: float = float("nan")


def greedy(qv: np.ndarray, tie_tol: float = 1e-9) -> np.ndarray:
    """Argmax over the last axis, breaking near-ties by lowest index."""
    best = qv.max(axis=-1, keepdims=True)
    return np.argmax(qv >= best - tie_tol, axis=-1)


def value_iteration(mdp: DualityMdp, tol: float = 1e-10, max_iters: int = 1_000_000,
                    damping: float = 0.5) -> ValueSolution:
    """Relative value iteration with the aperiodicity transform.

    Each sweep computes TV - V; its min and max bracket the optimal average
    reward.  Iteration stops once their span is below ``tol``.  ``damping``
    in (0, 1] mixes V with TV (1 is plain relative value iteration).
    """
    n, nq = mdp.channel.n, mdp.graph.n_nodes
    V = np.zeros(n * nq)
    ref = mdp.index(0, 0)
    lo, hi = -np.inf, np.inf
    it = 0
    for it in range(1, max_iters + 1):
        TV = mdp.q_values(V).max(axis=-1).ravel()
        diff = TV - V
        lo, hi = diff.min(), diff.max()
        if hi - lo < tol:
            break
        V = V + damping * diff
        V -= V[ref]
    converged = hi - lo < tol
    rho = 0.5 * (lo + hi)
    Vt = V.reshape(n, nq)
    sol = ValueSolution(float(rho), Vt, greedy(mdp.q_values(V)), converged, it, float(hi - lo))
    sol.residual = verify_bellman(mdp, Vt, rho).max_residual
    return sol


@dataclass
class BellmanReport:
    max_residual: float
    argmax_state: tuple
    residuals: np.ndarray
    passed: bool


def verify_bellman(mdp: DualityMdp, V, rho: float, tol: float = 1e-9) -> BellmanReport:
    """Residual max_x{R + E V(s',q')} - (rho + V(s,q)) at every state."""
    V = np.asarray(V, dtype=float).reshape(mdp.channel.n, mdp.graph.n_nodes)
    res = mdp.q_values(V.ravel()).max(axis=-1) - (rho + V)
    k = np.unravel_index(np.argmax(np.abs(res)), res.shape)
    worst = float(np.abs(res[k]))
    return BellmanReport(worst, (int(k[0]), int(k[1])), res, worst <= tol)


# -- closed forms ---------------------------------------------------------------

def quartic(n: int, x: float) -> float:
    return x**4 - ((n - 1) ** 4 + 4) * x**3 + 6 * x**2 - 4 * x + 1


def quartic_root(n: int) -> float:
    """Root in [0, 1] of x^4 - ((n-1)^4 + 4) x^3 + 6 x^2 - 4 x + 1."""
    if n < 2:
        raise InvalidArgument("alphabet size must be >= 2")
    f0, f1 = quartic(n, 0.0), quartic(n, 1.0)
    if f0 * f1 >= 0:
        raise ArithmeticError(f"no sign change on [0, 1] for n={n}")
    return float(bisect(lambda x: quartic(n, x), 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                        maxiter=200))


def quadratic_root(n: int) -> float:
    """Root in [0, 1] of x^2 - (2 + (n-1)^2 / (16 n)) x + 1."""
    if n < 3:
        raise InvalidArgument("alphabet size must be >= 3")
    b = 2.0 + (n - 1) ** 2 / (16.0 * n)
    big = (b + np.sqrt(b * b - 4.0)) / 2.0
    return float(1.0 / big)


def small_rate(n: int, p: float) -> float:
    """2 (H2(p) + (1-p) log(n-1)) / (p + 3)."""
    if not 0.0 <= p <= 1.0:
        raise InvalidArgument("p must lie in [0, 1]")
    return 2.0 * (h2(p) + (1 - p) * np.log2(n - 1)) / (p + 3)


def maximize_small_rate(n: int):
    """(max_p small_rate(n, p), argmax), by bounded scalar search to 1e-12."""
    grid = np.linspace(0.0, 1.0, 201)
    vals = [small_rate(n, p) for p in grid]
    k = int(np.argmax(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(lambda p: -small_rate(n, p), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return float(-res.fun), float(res.x)


def capacity_small(n: int):
    """Feedback capacity for 2 <= n <= 8 as (C, p_star).

    Evaluated in max form and as 0.5 log(1/p) at the quartic root; the two
    must agree to 1e-9.
    """
    if not 2 <= n <= SMALL_MAX:
        raise InvalidArgument(f"closed-form capacity holds for 2 <= |X| <= {SMALL_MAX} "
                              "(the value function needs rho < 2)")
    c_max, p_star = maximize_small_rate(n)
    c_root = 0.5 * np.log2(1.0 / quartic_root(n))
    if abs(c_max - c_root) > 1e-9:
        raise InternalError(f"max form {c_max} and root form {c_root} disagree")
    return float(c_max), p_star


def rho_small_candidate(n: int) -> float:
    return float(0.5 * np.log2(1.0 / quartic_root(n)))


def analytic_value_small(n: int) -> ValueSolution:
    """Closed-form value function on the 2n-node graph at p = quartic_root(n)."""
    if n < 2:
        raise InvalidArgument("alphabet size must be >= 2")
    p = quartic_root(n)
    rho = 0.5 * np.log2(1.0 / p)
    if not 2 <= n <= SMALL_MAX or rho >= 2:
        raise InvalidArgument(f"|X|={n} gives rho={rho:.4f}; the closed form needs rho < 2 "
                              f"(2 <= |X| <= {SMALL_MAX})")
    V = np.empty((n, 2 * n))
    lp = np.log2(1 + p)
    for s in range(n):
        for k in range(n):
            V[s, small_node(n, 1, k)] = rho if k == s else 1 + 1.5 * rho
            V[s, small_node(n, 0, k)] = 2 * rho - 1 + lp if k == s else 1.5 * rho + lp
    return ValueSolution(float(rho), V, np.zeros((n, 2 * n), dtype=int))


def analytic_value_large(n: int) -> ValueSolution:
    """Closed-form value function on the (n+3)-node graph at p = quadratic_root(n)."""
    p = quadratic_root(n)
    rho = 0.5 * np.log2(n / p)
    g, _ = ising_qgraph_large(n, p)
    L = np.log2(n)
    V = np.empty((n, g.n_nodes))
    for s in range(n):
        for q in range(g.n_nodes):
            if q == 0:
                V[s, q] = rho
            elif g.q_s[q] == s:
                V[s, q] = 2 * rho - L
            else:
                V[s, q] = 2 * rho + 2 - L
    return ValueSolution(float(rho), V, np.zeros((n, g.n_nodes), dtype=int))


def small_duality_mdp(n: int, p: float | None = None) -> DualityMdp:
    from .channel import ising_channel

    g, T = ising_qgraph_small(n, quartic_root(n) if p is None else p)
    return build_duality_mdp(ising_channel(n), g, T)


def large_duality_mdp(n: int, p: float | None = None) -> DualityMdp:
    from .channel import ising_channel

    g, T = ising_qgraph_large(n, quadratic_root(n) if p is None else p)
    return build_duality_mdp(ising_channel(n), g, T)


def ub_large(n: int) -> float:
    return float(0.5 * np.log2(n / quadratic_root(n)))


def ub_34(n: int) -> float:
    return float(0.75 * np.log2(n))


def lb_asymp(n: int) -> float:
    if n <= 2:
        raise InvalidArgument("partition scheme needs |X| > 2")
    return float(0.75 * np.log2(n / 2))


def bounds(n: int) -> dict:
    """Analytic capacity, upper bounds and scheme lower bounds for alphabet n."""
    if n < 2:
        raise InvalidArgument("alphabet size must be >= 2")
    lb_scheme, p_scheme = maximize_small_rate(n)
    return {
        "alphabet": n,
        "cap_small": capacity_small(n)[0] if n <= SMALL_MAX else None,
        "ub_large": ub_large(n) if n >= 3 else None,
        "ub_34": ub_34(n),
        "lb_scheme_small": lb_scheme,
        "p_scheme": p_scheme,
        "lb_asymp": lb_asymp(n) if n > 2 else None,
    }
