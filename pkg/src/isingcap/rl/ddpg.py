"""Actor-critic training on the belief MDP with a model-based expected target.

Since the channel law is known, the critic target averages the next-state
value over every output y instead of using the one that was sampled.
"""

from __future__ import annotations

import time

import numpy as np

from ..belief import (bcjr_update, monte_carlo_rate, output_prob, random_beliefs, reward,
                      sample_outputs)
from ..channel import UnifilarChannel
from ..nn import (Adam, MlpPolicy, actor_backward, actor_forward, clip_by_norm, critic,
                  critic_forward, critic_input_grads, soft_update)
from .config import RlConfig
from .pou import TrainingDiverged, TrainingResult, actor_policy, initial_actor
from .replay import ClusteredReplayBuffer, Transition, stack


def successor_beliefs(ch: UnifilarChannel, z: np.ndarray, u: np.ndarray):
    """All one-step posteriors: returns (P[b, y], Z[b, y, s']).

    Rows for outputs of zero probability hold z itself (they carry no weight).
    """
    g = ch.kernel[..., None] * ch.transition_onehot  # (x, s, y, s')
    num = np.einsum("bs,bsx,xsyt->byt", z, u, g)
    py = num.sum(axis=-1)
    safe = py > 0
    post = np.where(safe[..., None], num / np.where(safe, py, 1.0)[..., None], z[:, None, :])
    return py, post


def critic_target_expected(ch: UnifilarChannel, z_prev, u, r, rho_mc: float,
                           target_actor: MlpPolicy, target_critic: MlpPolicy) -> np.ndarray:
    """b = r - rho + sum_y p(y | z, u) Q'(z_y, A'(z_y)), batched over the first axis."""
    z_prev = np.atleast_2d(z_prev)
    B, n = z_prev.shape
    u = np.asarray(u).reshape(B, n, -1)
    py, post = successor_beliefs(ch, z_prev, u)
    flat = post.reshape(-1, n)
    a_next, _ = actor_forward(target_actor, flat, record=False)
    q_next, _ = critic_forward(target_critic, flat, a_next, record=False)
    return np.asarray(r) - rho_mc + np.sum(py * q_next.reshape(B, -1), axis=1)


def ddpg_train(ch: UnifilarChannel, cfg: RlConfig, log=None, time_limit: float | None = None) -> TrainingResult:
    """Train actor and critic; rho_mc is refreshed every ``cfg.eval_every`` episodes."""
    rng = np.random.default_rng(cfg.seed)
    n = ch.n
    act = initial_actor(n, cfg, rng)
    crit = critic(n, cfg.hidden, rng)
    act_t, crit_t = act.copy(), crit.copy()
    opt_a, opt_c = Adam(act, cfg.actor_lr), Adam(crit, cfg.critic_lr)
    buf = ClusteredReplayBuffer(n, cfg.replay_threshold, cfg.replay_capacity)
    sigma = np.sqrt(cfg.sigma2)
    start = time.monotonic()

    def evaluate():
        return monte_carlo_rate(ch, actor_policy(act), random_beliefs(n, 1, rng)[0], cfg.t_mc, rng,
                                chains=cfg.mc_chains)

    rho = evaluate()
    curve = [(0, rho, time.monotonic() - start)]
    if log:
        log(f"episode 0: rho_mc={rho:.5f}")
    for ep in range(1, cfg.episodes + 1):
        z = random_beliefs(n, 1, rng)
        for step in range(cfg.steps):
            noise = rng.normal(0.0, sigma, size=(1, cfg.hidden[-1])) if sigma > 0 else None
            u, _ = actor_forward(act, z, noise=noise, record=False)
            r = float(reward(ch, z, u)[0])
            y = sample_outputs(output_prob(ch, z, u), rng)
            z_next = bcjr_update(ch, z, u, y)
            buf.insert(Transition(z[0], u[0], r, z_next[0]))
            z = z_next
            if len(buf) < cfg.batch:
                continue
            Z, U, R, _ = stack(buf.sample(cfg.batch, rng))
            b = critic_target_expected(ch, Z, U, R, rho, act_t, crit_t)
            if cfg.critic_action == "stored":
                Ucrit = U
            else:
                Ucrit, _ = actor_forward(act, Z, record=False)
            q, cache = critic_forward(crit, Z, Ucrit, record=False)
            err = q - b
            loss = float(np.mean(err * err))
            if not np.isfinite(loss):
                raise TrainingDiverged("critic loss is not finite",
                                       {"episode": ep, "step": step, "loss": loss, "rho_mc": rho})
            g_c = crit.backward(cache, (2.0 / cfg.batch) * err[:, None])
            # actor: ascend Q(z, A(z)) through the critic's action input
            ua, cache_a = actor_forward(act, Z, record=False)
            _, cache_q = critic_forward(crit, Z, ua, record=False)
            g_q = crit.backward(cache_q, np.full((cfg.batch, 1), 1.0 / cfg.batch))
            _, gu = critic_input_grads(crit, g_q, n)
            g_a = actor_backward(act, cache_a, ua, gu)
            opt_c.step(clip_by_norm(g_c, cfg.grad_clip))
            opt_a.step(clip_by_norm(g_a, cfg.grad_clip), ascent=True)
            soft_update(act_t, act, cfg.alpha)
            soft_update(crit_t, crit, cfg.alpha)
        if ep % cfg.eval_every == 0 or ep == cfg.episodes:
            rho = evaluate()
            curve.append((ep, rho, time.monotonic() - start))
            if log:
                log(f"episode {ep}: rho_mc={rho:.5f} clusters={buf.n_clusters}")
        if time_limit is not None and time.monotonic() - start > time_limit:
            if curve[-1][0] != ep:
                rho = evaluate()
                curve.append((ep, rho, time.monotonic() - start))
            break
    return TrainingResult(act, rho, curve, crit, cfg.to_dict())
