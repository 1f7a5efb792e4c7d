"""DDPG exploitation agent: deterministic actor, critic, target copies and soft updates."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .nn import (
    AdamState,
    MlpParams,
    NonFiniteError,
    ShapeError,
    adam_step,
    backward_cache,
    forward_cache,
    init_mlp,
)
from .rl import Batch, sample_batch


@dataclass
class ExploitAgent:
    actor: MlpParams
    critic: MlpParams
    target_actor: MlpParams
    target_critic: MlpParams
    actor_opt: AdamState
    critic_opt: AdamState
    low: np.ndarray
    high: np.ndarray
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    clip_norm: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")

    @property
    def obs_dim(self) -> int:
        return self.actor.in_dim

    def act(self, obs, target: bool = False) -> np.ndarray:
        """Deterministic action(s), tanh output rescaled to the action bounds."""
        out, _ = forward_cache(self.target_actor if target else self.actor, obs)
        a = self.low + (out + 1.0) * (0.5 * (self.high - self.low))
        return a[0] if np.ndim(obs) == 1 else a

    def q(self, obs, act, target: bool = False) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(obs), np.atleast_2d(act)], axis=1)
        out, _ = forward_cache(self.target_critic if target else self.critic, x)
        return out[:, 0]

    def copy(self) -> "ExploitAgent":
        return replace(
            self,
            actor=self.actor.copy(), critic=self.critic.copy(),
            target_actor=self.target_actor.copy(), target_critic=self.target_critic.copy(),
            actor_opt=self.actor_opt.copy(), critic_opt=self.critic_opt.copy(),
        )


def make_agent(obs_dim: int, act_dim: int, low, high, rng: np.random.Generator,
               hidden: Sequence[int] = (64, 64), layer_norm: bool = True, **kw) -> ExploitAgent:
    actor = init_mlp([obs_dim, *hidden, act_dim], rng, layer_norm, out_act="tanh", final_scale=1e-3)
    critic = init_mlp([obs_dim + act_dim, *hidden, 1], rng, layer_norm)
    return ExploitAgent(
        actor, critic, actor.copy(), critic.copy(),
        AdamState.zeros_like(actor.tensors()), AdamState.zeros_like(critic.tensors()),
        np.asarray(low, dtype=np.float64), np.asarray(high, dtype=np.float64), **kw,
    )


def td_targets(agent: ExploitAgent, batch: Batch) -> np.ndarray:
    """y = r + gamma * (1 - done) * Q'(s', pi'(s'))."""
    a_next = agent.act(batch.next_obs, target=True)
    q_next = agent.q(batch.next_obs, a_next, target=True)
    return batch.rew + agent.gamma * (1.0 - batch.done.astype(np.float64)) * q_next


def critic_loss_grad(agent: ExploitAgent, batch: Batch, params: Optional[MlpParams] = None):
    """Mean squared TD error and its gradient w.r.t. the critic parameters."""
    params = agent.critic if params is None else params
    y = td_targets(agent, batch)
    x = np.concatenate([batch.obs, batch.act], axis=1)
    q, cache = forward_cache(params, x)
    err = q[:, 0] - y
    loss = float(np.mean(err * err))
    grads = backward_cache(params, cache, (2.0 / len(err)) * err[:, None])
    return loss, grads


def critic_update(agent: ExploitAgent, batch: Batch) -> float:
    """One Adam step on the TD loss. Returns the pre-step loss."""
    if batch.size == 0:
        raise ValueError("empty batch")
    loss, grads = critic_loss_grad(agent, batch)
    if not np.isfinite(loss):
        raise NonFiniteError(f"critic loss is {loss}")
    agent.critic, agent.critic_opt = adam_step(agent.critic_opt, agent.critic, grads, agent.critic_lr, agent.clip_norm)
    return loss


def actor_loss_grad(agent: ExploitAgent, obs: np.ndarray, params: Optional[MlpParams] = None):
    """-mean Q(s, pi(s)) and its gradient w.r.t. the actor parameters."""
    params = agent.actor if params is None else params
    n = len(obs)
    tanh_out, acache = forward_cache(params, obs)
    scale = 0.5 * (agent.high - agent.low)
    a = agent.low + (tanh_out + 1.0) * scale
    q, ccache = forward_cache(agent.critic, np.concatenate([obs, a], axis=1))
    loss = -float(q.mean())
    dq = np.full((n, 1), -1.0 / n)
    dx = backward_cache(agent.critic, ccache, dq).input
    da = dx[:, agent.obs_dim :]
    grads = backward_cache(params, acache, da * scale)
    return loss, grads


def actor_update(agent: ExploitAgent, batch: Batch) -> float:
    """One Adam step ascending mean Q(s, pi(s)). Returns -mean Q before the step."""
    if batch.size == 0:
        raise ValueError("empty batch")
    loss, grads = actor_loss_grad(agent, batch.obs)
    if not np.isfinite(loss):
        raise NonFiniteError(f"actor loss is {loss}")
    agent.actor, agent.actor_opt = adam_step(agent.actor_opt, agent.actor, grads, agent.actor_lr, agent.clip_norm)
    return loss


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """target <- (1 - tau) * target + tau * online, elementwise."""
    tt, ot = target.tensors(), online.tensors()
    if len(tt) != len(ot) or any(a.shape != b.shape for a, b in zip(tt, ot)):
        raise ShapeError("soft_update: target and online networks differ in shape")
    return target.with_tensors([(1.0 - tau) * a + tau * b for a, b in zip(tt, ot)])


def update_targets(agent: ExploitAgent) -> None:
    agent.target_actor = soft_update(agent.target_actor, agent.actor, agent.tau)
    agent.target_critic = soft_update(agent.target_critic, agent.critic, agent.tau)


def gaussian_noise_action(agent: ExploitAgent, obs, sigma, rng: np.random.Generator) -> np.ndarray:
    """clip(pi(obs) + N(0, sigma^2 I), bounds). ``sigma`` may be a scalar or per-dimension."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("sigma must be >= 0")
    a = agent.act(obs)
    if np.any(sigma > 0):
        a = a + sigma * rng.standard_normal(a.shape)
    return np.clip(a, agent.low, agent.high)


def updater(agent: ExploitAgent, source, times: int, batch_size: int, rng: np.random.Generator):
    """``times`` rounds of sample -> critic step -> actor step -> target soft updates.

    ``source`` is a ReplayBuffer or a Trajectory used as a temporary buffer.
    Returns mean (critic loss, actor loss), or (None, None) when ``times`` is 0.
    """
    closs, aloss = [], []
    for _ in range(times):
        batch = sample_batch(source, batch_size, rng)
        closs.append(critic_update(agent, batch))
        aloss.append(actor_update(agent, batch))
        update_targets(agent)
    if not closs:
        return None, None
    return float(np.mean(closs)), float(np.mean(aloss))


def tabular_q_update(q: float, r: float, gamma: float, next_max_q: float, alpha: float) -> float:
    """Single-cell Q-learning step: (1 - alpha) Q + alpha (r + gamma max Q')."""
    return (1.0 - alpha) * q + alpha * (r + gamma * next_max_q)
