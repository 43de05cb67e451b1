"""Belief-state MDP of the feedback capacity problem.

State z is the posterior of the channel state given past outputs, the action
u[s, x] = p(x | s) is a row-stochastic matrix, the reward is the conditional
mutual information I(X, S; Y) under (z, u) and the disturbance is the channel
output.  All functions accept an optional leading batch dimension.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .channel import InvalidArgument, UnifilarChannel

CLAMP = 1e-12
LOG2E = 1.0 / np.log(2.0)
# floor used when differentiating log P(y) at P(y) = 0
GRAD_FLOOR = 1e-12

Policy = Callable[[np.ndarray], np.ndarray]


class ImpossibleObservation(ValueError):
    """Raised when conditioning on an output with zero marginal probability."""


@dataclass
class StepOutcome:
    reward: float
    disturbance: int
    next_belief: np.ndarray


def check_belief(z, n: int, tol: float = 1e-9) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != n:
        raise InvalidArgument(f"belief has length {z.shape[-1]}, expected {n}")
    if np.any(z < -tol) or np.any(np.abs(z.sum(axis=-1) - 1.0) > tol):
        raise InvalidArgument("belief is not a probability vector")
    return z


def check_action(u, n: int, tol: float = 1e-9) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-2:] != (n, n):
        raise InvalidArgument(f"action has shape {u.shape[-2:]}, expected {(n, n)}")
    if np.any(u < -tol) or np.any(np.abs(u.sum(axis=-1) - 1.0) > tol):
        raise InvalidArgument("action rows are not probability vectors")
    return u


def normalize_belief(z: np.ndarray) -> np.ndarray:
    z = np.where(z < CLAMP, 0.0, z)
    return z / z.sum(axis=-1, keepdims=True)


def uniform_action(n: int) -> np.ndarray:
    return np.full((n, n), 1.0 / n)


def corner(n: int, s: int = 0) -> np.ndarray:
    z = np.zeros(n)
    z[s] = 1.0
    return z


def output_prob(ch: UnifilarChannel, z, u) -> np.ndarray:
    """P(y) = sum_{x,s} z(s) u(s,x) p(y|x,s)."""
    return np.einsum("...s,...sx,xsy->...y", z, u, ch.kernel)


def _entropy_bits(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(p > 0, p * np.log2(p), 0.0).sum(axis=-1)


def reward(ch: UnifilarChannel, z, u) -> np.ndarray | float:
    """I(X,S;Y) = H(Y) - H(Y|X,S) in bits."""
    py = output_prob(ch, z, u)
    cond = np.einsum("...s,...sx,xs->...", z, u, ch.output_entropies())
    r = _entropy_bits(py) - cond
    return float(r) if np.ndim(r) == 0 else r


def _gain(ch: UnifilarChannel, y: np.ndarray) -> np.ndarray:
    """g[..., x, s, s'] = p(y|x,s) 1[f(x,s,y) = s'], batch axis first."""
    g = ch.kernel[:, :, y][..., None] * ch.transition_onehot[:, :, y, :]
    return np.moveaxis(g, 2, 0) if y.ndim else g


def bcjr_update(ch: UnifilarChannel, z, u, y) -> np.ndarray:
    """Posterior of the new state after observing output y.

    ``y`` is an int, or an int array matching the batch shape.
    """
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=int)
    g = _gain(ch, y)
    num = np.einsum("...s,...sx,...xst->...t", z, u, g)
    den = num.sum(axis=-1, keepdims=True)
    if np.any(den <= 0):
        raise ImpossibleObservation(f"output {y.tolist()} has zero probability under (z, u)")
    return normalize_belief(num / den)


def env_step(ch: UnifilarChannel, z, u, rng: np.random.Generator) -> StepOutcome:
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    py = output_prob(ch, z, u)
    y = int(rng.choice(ch.n, p=py / py.sum()))
    return StepOutcome(reward(ch, z, u), y, bcjr_update(ch, z, u, y))


def sample_outputs(py: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a (B, Y) probability array."""
    cdf = np.cumsum(py, axis=-1)
    r = rng.random(py.shape[:-1] + (1,)) * cdf[..., -1:]
    return np.minimum((r >= cdf).sum(axis=-1), py.shape[-1] - 1)


def random_beliefs(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples from the probability simplex."""
    return rng.dirichlet(np.ones(n), size=count)


def rollout(ch: UnifilarChannel, policy: Policy, z0, steps: int, rng: np.random.Generator,
            chains: int = 1, record: bool = False):
    """Run ``chains`` independent trajectories of ``steps`` steps.

    ``policy`` maps a (B, S) batch of beliefs to a (B, S, X) batch of actions.
    Returns (rewards[steps, chains], trace) where trace holds the beliefs
    z_{t-1} and outputs y_t when ``record`` is set.
    """
    n = ch.n
    z = np.broadcast_to(np.asarray(z0, dtype=float), (chains, n)).copy()
    rewards = np.empty((steps, chains))
    beliefs = np.empty((steps, chains, n)) if record else None
    outputs = np.empty((steps, chains), dtype=int) if record else None
    for t in range(steps):
        u = policy(z)
        py = output_prob(ch, z, u)
        rewards[t] = reward(ch, z, u)
        y = sample_outputs(py, rng)
        if record:
            beliefs[t] = z
            outputs[t] = y
        z = bcjr_update(ch, z, u, y)
    trace = {"beliefs": beliefs, "outputs": outputs, "final": z} if record else None
    return rewards, trace


def monte_carlo_rate(ch: UnifilarChannel, policy: Policy, z0, t_mc: int,
                     rng: np.random.Generator, chains: int = 1) -> float:
    """Average reward along sampled trajectories, t_mc steps in total."""
    if t_mc < 1:
        raise InvalidArgument("t_mc must be >= 1")
    chains = max(1, min(chains, t_mc))
    steps = -(-t_mc // chains)
    rewards, _ = rollout(ch, policy, z0, steps, rng, chains=chains)
    return float(rewards.ravel()[:t_mc].mean()) if chains == 1 else float(rewards.mean())


def monte_carlo_estimate(ch: UnifilarChannel, policy: Policy, z0, t_mc: int,
                         rng: np.random.Generator, chains: int = 100):
    """(mean reward, standard error) with the error taken across chain averages."""
    chains = max(2, min(chains, t_mc))
    steps = -(-t_mc // chains)
    rewards, _ = rollout(ch, policy, z0, steps, rng, chains=chains)
    means = rewards.mean(axis=0)
    return float(means.mean()), float(means.std(ddof=1) / np.sqrt(chains))


def write_trace_csv(path, rewards: np.ndarray, trace: dict, chain: int = 0) -> None:
    beliefs = trace["beliefs"][:, chain]
    outputs = trace["outputs"][:, chain]
    n = beliefs.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "y", "r"] + [f"z{s}" for s in range(n)])
        for t in range(len(outputs)):
            w.writerow([t + 1, int(outputs[t]), repr(float(rewards[t, chain]))]
                       + [repr(float(v)) for v in beliefs[t]])


def read_trace_csv(path):
    """Inverse of write_trace_csv: returns (beliefs z_{t-1}, outputs y_t)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InvalidArgument(f"empty trace {path}")
    zcols = [k for k in rows[0] if k.startswith("z")]
    beliefs = np.array([[float(r[k]) for k in zcols] for r in rows])
    outputs = np.array([int(r["y"]) for r in rows])
    return beliefs, outputs


# -- vector-Jacobian products used by the unrolled policy optimizer ----------

def reward_vjp(ch: UnifilarChannel, z: np.ndarray, u: np.ndarray, gbar: np.ndarray):
    """Gradients of gbar * reward(z, u) w.r.t. z (B, S) and u (B, S, X)."""
    py = output_prob(ch, z, u)
    d_py = -(np.log2(np.maximum(py, GRAD_FLOOR)) + LOG2E)
    h = ch.output_entropies()
    # dP/du[s,x] = z_s K[x,s,:], dP/dz_s = sum_x u[s,x] K[x,s,:]
    ky = np.einsum("xsy,by->bsx", ch.kernel, d_py)
    gu = z[:, :, None] * (ky - h.T[None]) * gbar[:, None, None]
    gz = np.einsum("bsx,bsx->bs", u, ky - h.T[None]) * gbar[:, None]
    return gz, gu


def bcjr_vjp(ch: UnifilarChannel, z: np.ndarray, u: np.ndarray, y: np.ndarray,
             z_next: np.ndarray, gnext: np.ndarray):
    """Backpropagate gnext (B, S') through z_next = bcjr_update(z, u, y).

    The small-entry clamp is treated as the identity.
    """
    g = _gain(ch, y)
    py = np.einsum("bs,bsx,bxst->b", z, u, g)
    gnum = (gnext - np.sum(gnext * z_next, axis=-1, keepdims=True)) / py[:, None]
    gs = np.einsum("bxst,bt->bsx", g, gnum)  # d/d(z_s u_sx)
    gz = np.einsum("bsx,bsx->bs", u, gs)
    gu = z[:, :, None] * gs
    return gz, gu
