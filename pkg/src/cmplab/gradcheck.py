"""Finite-difference verification of every hand-written gradient in the package."""

from __future__ import annotations

from typing import Callable, Dict, List, Optional

import numpy as np

from .cmp import (
    MetaMemory,
    log_prob_objective_grad,
    make_explore_policy,
    make_metaq,
    metaq_loss_grad,
)
from .ddpg import actor_loss_grad, critic_loss_grad, make_agent
from .nn import backward_cache, finite_diff_array, finite_diff_grad, forward_cache, max_rel_error
from .rl import Batch, Trajectory

TOLERANCE = 1e-4
FD_EPS = 1e-5
CHECKS = ("actor", "critic", "explore_log_prob", "meta_q", "meta_q_loss")

# hook signature: corrupt(check_name, analytic_tensors) -> analytic_tensors
Corruptor = Callable[[str, List[np.ndarray]], List[np.ndarray]]


def _fixture(seed: int, obs_dim: int = 3, act_dim: int = 2, n: int = 12, hidden=(64, 64)):
    rng = np.random.default_rng(seed)
    low, high = -2.0 * np.ones(act_dim), 2.0 * np.ones(act_dim)
    agent = make_agent(obs_dim, act_dim, low, high, rng, hidden)
    # move away from the tiny-output init so tanh and the critic see non-trivial inputs
    agent.actor = agent.actor.with_tensors([t + 0.3 * rng.standard_normal(t.shape) for t in agent.actor.tensors()])
    explore = make_explore_policy(obs_dim, act_dim, low, high, rng, hidden, final_scale=1.0)
    explore.log_std = rng.uniform(-1.0, 0.5, act_dim)
    metaq = make_metaq(obs_dim, act_dim, rng, hidden)
    metaq.target = metaq.target.with_tensors([t + 0.1 * rng.standard_normal(t.shape) for t in metaq.target.tensors()])

    def traj():
        return Trajectory(
            rng.standard_normal((n, obs_dim)), rng.uniform(low, high, (n, act_dim)), rng.standard_normal(n),
            rng.standard_normal((n, obs_dim)), rng.random(n) < 0.3, np.full(n, np.nan),
            raw_act=rng.uniform(1.2 * low, 1.2 * high, (n, act_dim)),
        )

    return rng, agent, explore, metaq, traj(), traj()


def check_all(seed: int = 0, corrupt: Optional[Corruptor] = None, hidden=(64, 64)) -> Dict[str, float]:
    """Max componentwise relative error between analytic and central-difference gradients, per check."""
    rng, agent, explore, metaq, tau, tau_prev = _fixture(seed, hidden=hidden)
    corrupt = corrupt or (lambda name, g: g)
    batch = Batch(tau.obs, tau.act, tau.rew, tau.next_obs, tau.done)
    out: Dict[str, float] = {}

    _, g = actor_loss_grad(agent, batch.obs)
    num = finite_diff_grad(lambda p: actor_loss_grad(agent, batch.obs, p)[0], agent.actor, FD_EPS)
    out["actor"] = max_rel_error(corrupt("actor", g.tensors), num.tensors)

    _, g = critic_loss_grad(agent, batch)
    num = finite_diff_grad(lambda p: critic_loss_grad(agent, batch, p)[0], agent.critic, FD_EPS)
    out["critic"] = max_rel_error(corrupt("critic", g.tensors), num.tensors)

    adv = float(rng.normal())
    _, g = log_prob_objective_grad(explore, tau.obs, tau.raw_act, adv)
    num_mean = finite_diff_grad(
        lambda p: log_prob_objective_grad(explore, tau.obs, tau.raw_act, adv, mean=p)[0], explore.mean, FD_EPS
    )
    num_std = finite_diff_array(
        lambda ls: log_prob_objective_grad(explore, tau.obs, tau.raw_act, adv, log_std=ls)[0], explore.log_std, FD_EPS
    )
    out["explore_log_prob"] = max_rel_error(corrupt("explore_log_prob", g), num_mean.tensors + [num_std])

    pairs = tau.pairs()

    def qsum(p):
        return float(forward_cache(p, pairs)[0].sum())

    q, cache = forward_cache(metaq.net, pairs)
    g = backward_cache(metaq.net, cache, np.ones_like(q))
    num = finite_diff_grad(qsum, metaq.net, FD_EPS)
    out["meta_q"] = max_rel_error(corrupt("meta_q", g.tensors), num.tensors)

    memory = MetaMemory(tau_prev, float(rng.normal()), 0.0, True)
    _, g = metaq_loss_grad(metaq, memory, tau)
    num = finite_diff_grad(lambda p: metaq_loss_grad(metaq, memory, tau, p)[0], metaq.net, FD_EPS)
    out["meta_q_loss"] = max_rel_error(corrupt("meta_q_loss", g.tensors), num.tensors)
    return out


def run(seed: int = 0, corrupt: Optional[Corruptor] = None, echo=print) -> int:
    """Print one line per check; return 0 iff every check is under tolerance."""
    errors = check_all(seed, corrupt)
    failed = []
    for name in CHECKS:
        ok = errors[name] < TOLERANCE
        echo(f"{name:<18s} max_rel_err={errors[name]:.3e}  {'ok' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if failed:
        echo(f"gradcheck failed: {', '.join(failed)}")
        return 2
    return 0
