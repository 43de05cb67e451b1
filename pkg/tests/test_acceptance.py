"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are also repeated in the terminal summary so they survive output
capture.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_action, random_channel
from isingcap.bcjr_verify import StructuredPolicy, verify
from isingcap.belief import bcjr_update, corner, monte_carlo_estimate, random_beliefs, reward
from isingcap.channel import ising_channel
from isingcap.coding import (markov_source, partition_source, simulate_asymp_scheme,
                             simulate_small_scheme)
from isingcap.duality import (analytic_value_large, analytic_value_small, bounds, capacity_small,
                              large_duality_mdp, maximize_small_rate, quartic_root, small_duality_mdp,
                              value_iteration, verify_bellman)
from isingcap.nn import actor, actor_backward, actor_forward, critic, critic_forward
from isingcap.rl import RlConfig, actor_policy, ddpg_train, pou_train, pou_unroll


def gate(number: int, title: str, checks: dict, detail: str = "") -> None:
    failed = [name for name, ok in checks.items() if not ok]
    verdict = "PASS" if not failed else "FAIL"
    line = f"criterion {number} {verdict}: {title}" + (f" ({detail})" if detail else "")
    if failed:
        line += " failed: " + ", ".join(failed)
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert not failed, line


def grid_rate_max(n: int, points: int = 1_000_001) -> float:
    """max over a fine p grid of 2 (H2(p) + (1-p) log(n-1)) / (p + 3)."""
    p = np.linspace(0.0, 1.0, points)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log2(p), 0) - np.where(p < 1, (1 - p) * np.log2(1 - p), 0)
    return float(np.max(2 * (h + (1 - p) * np.log2(n - 1)) / (p + 3)))


def quadratic_root_oracle(n: int) -> float:
    roots = np.roots([1.0, -(2 + (n - 1) ** 2 / (16 * n)), 1.0])
    return float(min(r.real for r in roots if abs(r.imag) < 1e-12))


def test_criterion_1_capacity_formulas():
    start = time.perf_counter()
    results = {n: capacity_small(n) for n in range(2, 9)}
    elapsed = time.perf_counter() - start
    agree = max(abs(c - 0.5 * np.log2(1 / quartic_root(n))) for n, (c, _) in results.items())
    c2, c3 = results[2][0], results[3][0]
    gate(1, "capacity max form vs quartic-root form", {
        "forms agree within 1e-9": agree <= 1e-9,
        "C(2) ~ 0.5755": abs(c2 - 0.5755) <= 1e-3 and abs(c2 - grid_rate_max(2)) <= 1e-3,
        "C(3) ~ 0.9613": abs(c3 - 0.9613) <= 1e-3 and abs(c3 - grid_rate_max(3)) <= 1e-3,
        "runtime < 1 s": elapsed < 1.0,
    }, f"max disagreement {agree:.1e}, C(2)={c2:.6f}, C(3)={c3:.6f}, {elapsed:.2f} s")


def test_criterion_2_small_graph_value_function():
    start = time.perf_counter()
    residual, gap = 0.0, 0.0
    for n in range(2, 9):
        mdp = small_duality_mdp(n)
        ref = analytic_value_small(n)
        residual = max(residual, verify_bellman(mdp, ref.V, ref.rho).max_residual)
        sol = value_iteration(mdp)
        gap = max(gap, abs(sol.rho - ref.rho))
    elapsed = time.perf_counter() - start
    gate(2, "small Q-graph Bellman residual and value iteration", {
        "residual <= 1e-9": residual <= 1e-9,
        "value iteration within 1e-6": gap <= 1e-6,
        "runtime < 10 s": elapsed < 10.0,
    }, f"residual {residual:.1e}, rho gap {gap:.1e}, {elapsed:.2f} s")


def test_criterion_3_large_graph():
    residual = 0.0
    for n in range(9, 33):
        ref = analytic_value_large(n)
        residual = max(residual, verify_bellman(large_duality_mdp(n), ref.V, ref.rho).max_residual)
    closed = 0.5 * np.log2(9 / quadratic_root_oracle(9))
    ub9 = bounds(9)["ub_large"]
    vi9 = value_iteration(large_duality_mdp(9)).rho
    gate(3, "large Q-graph Bellman residual and ub_large(9)", {
        "residual <= 1e-9 for 9..32": residual <= 1e-9,
        "ub_large(9) within 1e-3 of closed form": abs(ub9 - closed) <= 1e-3 and abs(ub9 - 2.057) <= 1e-3,
        "value iteration agrees": abs(vi9 - ub9) <= 1e-6,
    }, f"residual {residual:.1e}, ub_large(9)={ub9:.6f}")


def test_criterion_4_bcjr_tightness():
    reports = [verify(n) for n in range(2, 9)]
    inv_err = max(max(r["max_output_error"], r["max_closure_error"]) for r in reports)
    gap = max(r["gap"] for r in reports)
    pi_err = max(r["pi_error"] for r in reports)
    gate(4, "BCJR invariance, single-letter rate, stationary law", {
        "invariance within 1e-12": all(r["bcjr_invariant"] for r in reports) and inv_err <= 1e-12,
        "rate equals rho within 1e-9": gap <= 1e-9,
        "stationary law within 1e-10": pi_err <= 1e-10,
    }, f"invariance {inv_err:.1e}, rate gap {gap:.1e}, pi error {pi_err:.1e}")


def test_criterion_5_coding_schemes():
    checks, notes = {}, []
    for n in (2, 4, 8):
        rng = np.random.default_rng(100 + n)
        p = maximize_small_rate(n)[1]
        start = time.perf_counter()
        src = markov_source(n, p, 10**6, rng)
        st = simulate_small_scheme(ising_channel(n), src, rng)
        elapsed = time.perf_counter() - start
        expected = 2 * p + 1.5 * (1 - p)
        checks[f"small n={n} zero errors"] = st.errors == 0 and np.array_equal(st.decoded, src.symbols)
        checks[f"small n={n} uses within 3 sigma"] = abs(st.uses_per_symbol - expected) <= 3 * st.stderr_uses()
        checks[f"small n={n} under 1 min"] = elapsed < 60
        notes.append(f"small {n}: {st.uses_per_symbol:.4f} vs {expected:.4f}")
    for n in (4, 8, 16):
        rng = np.random.default_rng(200 + n)
        start = time.perf_counter()
        src = partition_source(n, 10**6, rng)
        st = simulate_asymp_scheme(ising_channel(n), src, rng)
        elapsed = time.perf_counter() - start
        checks[f"asymp n={n} zero errors"] = st.errors == 0 and np.array_equal(st.decoded, src.symbols)
        checks[f"asymp n={n} uses within 3 sigma"] = abs(st.uses_per_symbol - 4 / 3) <= 3 * st.stderr_uses()
        checks[f"asymp n={n} rate within 0.02"] = abs(st.rate - 0.75 * np.log2(n / 2)) <= 0.02
        checks[f"asymp n={n} under 1 min"] = elapsed < 60
        notes.append(f"asymp {n}: rate {st.rate:.4f}")
    gate(5, "zero-error coding schemes at 10^6 symbols", checks, "; ".join(notes))


def test_criterion_6_bound_ordering():
    ok_order = ok_gap = ok_cap = True
    for n in range(3, 65):
        b = bounds(n)
        best_lb = max(b["lb_scheme_small"], b["lb_asymp"])
        ok_order &= b["lb_asymp"] <= best_lb <= min(b["ub_large"], b["ub_34"]) + 1e-12
        ok_gap &= abs(b["ub_34"] - b["lb_asymp"] - 0.75) <= 1e-12
        if b["cap_small"] is not None:
            ok_cap &= abs(b["cap_small"] - b["lb_scheme_small"]) <= 1e-9 and b["cap_small"] <= b["ub_34"]
    gate(6, "bound ordering over 3..64", {
        "lb_asymp <= best lower <= best upper": ok_order,
        "ub_34 - lb_asymp = 0.75": ok_gap,
        "capacity equals scheme bound, below ub_34": ok_cap,
    })


def _joint(ch, z, u):
    """p(x, s, y) by explicit loops."""
    n = ch.n
    out = np.zeros((n, n, n))
    for s in range(n):
        for x in range(n):
            for y in range(n):
                out[x, s, y] = z[s] * u[s, x] * ch.kernel[x, s, y]
    return out


def _posterior(ch, z, u, y):
    joint = _joint(ch, z, u)
    post = np.zeros(ch.n)
    for x in range(ch.n):
        for s in range(ch.n):
            post[ch.state_fn[x, s, y]] += joint[x, s, y]
    return post / post.sum()


def _mutual_information(ch, z, u):
    joint = _joint(ch, z, u)
    py = joint.sum(axis=(0, 1))
    pxs = joint.sum(axis=2)
    total = 0.0
    for x, s, y in np.ndindex(joint.shape):
        if joint[x, s, y] > 0:
            total += joint[x, s, y] * np.log2(joint[x, s, y] / (pxs[x, s] * py[y]))
    return total


def test_criterion_7_belief_core():
    rng = np.random.default_rng(7)
    post_err = rew_err = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 6))
        ch = random_channel(n, rng)
        z = rng.dirichlet(np.ones(n))
        u = random_action(n, rng)
        rew_err = max(rew_err, abs(float(reward(ch, z, u)) - _mutual_information(ch, z, u)))
        py = _joint(ch, z, u).sum(axis=(0, 1))
        y = int(rng.choice(n, p=py / py.sum()))
        post_err = max(post_err, float(np.max(np.abs(bcjr_update(ch, z, u, y) - _posterior(ch, z, u, y)))))
    gate(7, "belief update and reward against brute force", {
        "posterior within 1e-10": post_err <= 1e-10,
        "reward within 1e-10": rew_err <= 1e-10,
    }, f"posterior {post_err:.1e}, reward {rew_err:.1e}")


def _fd_error(params, grads, loss, rng, coords=80, eps=1e-6):
    a, f = [], []
    for _ in range(coords):
        k = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(d)) for d in params[k].shape)
        old = params[k][idx]
        params[k][idx] = old + eps
        lp = loss()
        params[k][idx] = old - eps
        lm = loss()
        params[k][idx] = old
        a.append(grads[k][idx])
        f.append((lp - lm) / (2 * eps))
    a, f = np.array(a), np.array(f)
    return float(np.linalg.norm(a - f) / np.linalg.norm(f))


def _randomize(net, rng, scale):
    for p in net.parameters():
        p[...] = rng.normal(0, scale, size=p.shape)
    return net


def test_criterion_8_gradient_integrity():
    rng = np.random.default_rng(8)
    n = 3
    act = _randomize(actor(n, (16, 16), rng), rng, 0.3)
    z = random_beliefs(n, 5, rng)
    w = rng.normal(size=(5, n, n))
    u, cache = actor_forward(act, z)
    g = actor_backward(act, cache, u, w)
    e_actor = _fd_error(act.parameters(), g.weights + g.biases,
                        lambda: float(np.sum(w * actor_forward(act, z, record=False)[0])), rng)

    crit = _randomize(critic(n, (16, 16), rng), rng, 0.3)
    uu = rng.dirichlet(np.ones(n), size=(5, n))
    _, cache = critic_forward(crit, z, uu)
    g = crit.backward(cache, np.ones((5, 1)))
    e_critic = _fd_error(crit.parameters(), g.weights + g.biases,
                         lambda: float(critic_forward(crit, z, uu, record=False)[0].sum()), rng)

    ch = ising_channel(n)
    net = _randomize(actor(n, (16, 16), rng), rng, 0.5)
    z0 = random_beliefs(n, 4, rng)
    res = pou_unroll(ch, net, z0, 10, rng)
    e_pou = _fd_error(net.parameters(), res.grads.weights + res.grads.biases,
                      lambda: pou_unroll(ch, net, z0, 10, rng, record_gradients=False,
                                         outputs=res.outputs).avg_reward, rng)
    gate(8, "analytic gradients against central differences", {
        "actor": e_actor <= 1e-3, "critic": e_critic <= 1e-3, "unroll": e_pou <= 1e-3,
    }, f"actor {e_actor:.1e}, critic {e_critic:.1e}, unroll {e_pou:.1e}")


def _best_of_three(trainer, ch, target, bound, **cfg):
    runs = []
    for seed in range(3):
        start = time.perf_counter()
        res = trainer(ch, RlConfig(seed=seed, **cfg))
        elapsed = time.perf_counter() - start
        est, err = monte_carlo_estimate(ch, actor_policy(res.actor), corner(ch.n), 100_000,
                                        np.random.default_rng(1000 + seed), chains=100)
        runs.append((res.rho_mc, est, err, elapsed))
        if res.rho_mc >= target:
            break
    best = max(runs, key=lambda r: r[0])
    below = all(est <= bound + 3 * err for _, est, err, _ in runs)
    within_time = all(sec <= 1800 for *_, sec in runs)
    return best, below, within_time, len(runs)


@pytest.mark.slow
def test_criterion_9_reinforcement_learning():
    c3, c2 = capacity_small(3)[0], capacity_small(2)[0]
    pou, pou_below, pou_time, pou_runs = _best_of_three(
        pou_train, ising_channel(3), 0.92, c3,
        episodes=100, steps=100, batch=32, unroll=20, t_mc=100_000, eval_every=10)
    ddpg, ddpg_below, ddpg_time, ddpg_runs = _best_of_three(
        ddpg_train, ising_channel(2), 0.55, c2,
        episodes=200, steps=500, batch=64, t_mc=100_000, eval_every=10)
    gate(9, "RL lower bounds at desk scale (best of 3 seeds)", {
        "POU ising 3 >= 0.92": pou[0] >= 0.92,
        "DDPG ising 2 >= 0.55": ddpg[0] >= 0.55,
        "no estimate above the duality bound by 3 sigma": pou_below and ddpg_below,
        "each run <= 30 min": pou_time and ddpg_time,
    }, f"POU {pou[0]:.4f} in {pou_runs} run(s) {pou[3]:.0f} s, "
       f"DDPG {ddpg[0]:.4f} in {ddpg_runs} run(s) {ddpg[3]:.0f} s")
