"""Policy optimization by unrolling: the belief recursion is differentiable in
(z, u) once the outputs are frozen, so the average reward of an n-step block
can be backpropagated into the actor exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..belief import (bcjr_update, bcjr_vjp, check_belief, monte_carlo_rate, output_prob,
                      random_beliefs, reward, reward_vjp, sample_outputs)
from ..channel import UnifilarChannel
from ..nn import Adam, GradientSet, MlpPolicy, actor, actor_backward, actor_forward, clip_by_norm
from .config import RlConfig


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class UnrollResult:
    avg_reward: float             # mean over chains and steps
    chain_rewards: np.ndarray     # (B,) block averages
    final_belief: np.ndarray      # (B, S)
    outputs: np.ndarray           # (n, B)
    grads: GradientSet | None = None

    def __iter__(self):
        return iter((self.avg_reward, self.final_belief))


@dataclass
class TrainingResult:
    actor: MlpPolicy
    rho_mc: float
    curve: list = field(default_factory=list)   # (episode, rho_mc, seconds)
    critic: MlpPolicy | None = None
    config: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.actor, self.rho_mc))

    def write_curve(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("episode,rho_mc,seconds\n")
            for ep, rho, sec in self.curve:
                fh.write(f"{ep},{rho!r},{sec:.3f}\n")


def initial_actor(n: int, cfg: RlConfig, rng: np.random.Generator) -> MlpPolicy:
    net = actor(n, cfg.hidden, rng, dropout=cfg.dropout)
    if cfg.actor_init == "zeros":
        for p in net.parameters():
            p[...] = 0.0
    return net


def actor_policy(net: MlpPolicy):
    """Deterministic belief policy (no noise, no dropout) backed by ``net``."""
    def policy(z):
        return actor_forward(net, z, record=False)[0].reshape(len(z), net.action_dim, -1)
    return policy


def pou_unroll(ch: UnifilarChannel, net: MlpPolicy, z0, n: int, rng: np.random.Generator,
               record_gradients: bool = True, outputs=None, dropout_on: bool = False) -> UnrollResult:
    """Run n steps from z0 (S,) or (B, S) and return the block-average reward.

    With ``record_gradients`` the gradient of the mean block reward w.r.t. the
    actor parameters is returned, treating the sampled outputs as fixed.
    ``outputs`` (n, B) replays given outputs instead of sampling.  ``net``
    may also be any belief policy callable when no gradients are recorded.
    """
    if not isinstance(net, MlpPolicy):
        if record_gradients:
            raise TypeError("gradients need an MlpPolicy actor")
        policy = net
    else:
        policy = None
    single = np.ndim(z0) == 1
    z = np.atleast_2d(np.asarray(z0, dtype=float)).copy()
    for row in z:
        check_belief(row, ch.n)
    B = len(z)
    if outputs is not None:
        outputs = np.asarray(outputs, dtype=int).reshape(n, B)
    zs, us, caches, ys = [z], [], [], np.empty((n, B), dtype=int)
    total = np.zeros(B)
    for t in range(n):
        if policy is None:
            u, cache = actor_forward(net, z, dropout_on=dropout_on, rng=rng, record=False)
        else:
            u, cache = policy(z), None
        total += reward(ch, z, u)
        y = sample_outputs(output_prob(ch, z, u), rng) if outputs is None else outputs[t]
        ys[t] = y
        z = bcjr_update(ch, z, u, y)
        if record_gradients:
            us.append(u)
            caches.append(cache)
            zs.append(z)
    chain = total / n
    res = UnrollResult(float(chain.mean()), chain, z[0] if single else z, ys)
    if not record_gradients:
        return res
    gbar = np.full(B, 1.0 / (n * B))
    gz_next = np.zeros_like(z)
    acc = None
    for t in range(n - 1, -1, -1):
        z_prev, u = zs[t], us[t]
        gz_r, gu_r = reward_vjp(ch, z_prev, u, gbar)
        gz_b, gu_b = bcjr_vjp(ch, z_prev, u, ys[t], zs[t + 1], gz_next)
        g = actor_backward(net, caches[t], u, gu_r + gu_b)
        gz_next = gz_r + gz_b + g.input
        acc = g if acc is None else acc + g
    res.grads = GradientSet(acc.weights, acc.biases, gz_next)
    return res


def pou_train(ch: UnifilarChannel, cfg: RlConfig, log=None, time_limit: float | None = None) -> TrainingResult:
    """Gradient ascent on unrolled block rewards.

    Each episode restarts ``cfg.batch`` chains at random beliefs and runs
    ``cfg.steps`` blocks of ``cfg.unroll`` steps, carrying the final belief of
    one block into the next.  Exploration comes from dropout in the actor.
    """
    rng = np.random.default_rng(cfg.seed)
    net = initial_actor(ch.n, cfg, rng)
    opt = Adam(net, cfg.actor_lr)
    start = time.monotonic()
    curve = []
    rho = float("nan")

    def evaluate(ep):
        nonlocal rho
        rho = monte_carlo_rate(ch, actor_policy(net), random_beliefs(ch.n, 1, rng)[0], cfg.t_mc,
                               rng, chains=cfg.mc_chains)
        curve.append((ep, rho, time.monotonic() - start))
        if log:
            log(f"episode {ep}: rho_mc={rho:.5f}")

    for ep in range(1, cfg.episodes + 1):
        z = random_beliefs(ch.n, cfg.batch, rng)
        for step in range(cfg.steps):
            res = pou_unroll(ch, net, z, cfg.unroll, rng, dropout_on=cfg.dropout > 0)
            if not res.grads.is_finite() or not np.isfinite(res.avg_reward):
                raise TrainingDiverged("non-finite unroll gradient",
                                       {"episode": ep, "step": step, "avg_reward": res.avg_reward})
            opt.step(clip_by_norm(res.grads, cfg.grad_clip), ascent=True)
            z = res.final_belief
        if ep % cfg.eval_every == 0 or ep == cfg.episodes:
            evaluate(ep)
        if time_limit is not None and time.monotonic() - start > time_limit:
            if not curve or curve[-1][0] != ep:
                evaluate(ep)
            break
    return TrainingResult(net, rho, curve, None, cfg.to_dict())
