"""Counterfactual meta policy: exploration policy, meta-Q estimator and the counterfactual advantage.

The exploration policy is a diagonal Gaussian in normalized action space ``[-1, 1]^d``:
its mean is a tanh-squashed MLP (same shape as the exploitation actor) and its spread is
a free log-std vector. Log-densities are taken in normalized units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .ddpg import ExploitAgent, soft_update
from .nn import (
    AdamState,
    MlpParams,
    NonFiniteError,
    ShapeError,
    adam_update,
    backward_cache,
    forward_cache,
    init_mlp,
)
from .rl import Trajectory

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class ExplorePolicy:
    mean: MlpParams
    log_std: np.ndarray
    low: np.ndarray
    high: np.ndarray
    opt: Optional[AdamState] = None
    lr: float = 1e-4
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    clip_norm: Optional[float] = None

    def __post_init__(self):
        self.log_std = np.asarray(self.log_std, dtype=np.float64)
        if self.log_std.shape != (self.mean.out_dim,):
            raise ShapeError("log_std must have one entry per action dimension")
        if not np.isfinite(self.log_std).all():
            raise ValueError("log_std must be finite")
        if np.any(self.log_std < self.log_std_min) or np.any(self.log_std > self.log_std_max):
            raise ValueError(f"log_std outside [{self.log_std_min}, {self.log_std_max}]")
        if self.opt is None:
            self.opt = AdamState.zeros_like(self.tensors())

    def tensors(self):
        return self.mean.tensors() + [self.log_std]

    def set_tensors(self, tensors) -> None:
        self.mean = self.mean.with_tensors(tensors[:-1])
        self.log_std = np.clip(tensors[-1], self.log_std_min, self.log_std_max)

    def normalize(self, a):
        return 2.0 * (np.asarray(a) - self.low) / (self.high - self.low) - 1.0

    def denormalize(self, u):
        return self.low + (np.asarray(u) + 1.0) * (0.5 * (self.high - self.low))

    def mean_action(self, obs) -> np.ndarray:
        """Mean action in environment units."""
        out, _ = forward_cache(self.mean, obs)
        a = self.denormalize(out)
        return a[0] if np.ndim(obs) == 1 else a

    def copy(self) -> "ExplorePolicy":
        return replace(self, mean=self.mean.copy(), log_std=self.log_std.copy(), opt=self.opt.copy())


def make_explore_policy(obs_dim: int, act_dim: int, low, high, rng: np.random.Generator,
                        hidden: Sequence[int] = (64, 64), layer_norm: bool = True,
                        log_std_init: float = -0.7, final_scale: float = 1.0, **kw) -> ExplorePolicy:
    mean = init_mlp([obs_dim, *hidden, act_dim], rng, layer_norm, out_act="tanh", final_scale=final_scale)
    return ExplorePolicy(mean, np.full(act_dim, float(log_std_init)),
                         np.asarray(low, dtype=np.float64), np.asarray(high, dtype=np.float64), **kw)


def gaussian_log_prob(u: np.ndarray, mu: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Row-wise diagonal-Gaussian log density."""
    z = (u - mu) * np.exp(-log_std)
    return (-0.5 * z * z - log_std - HALF_LOG_2PI).sum(axis=-1)


def propose_explore_action(policy: ExplorePolicy, obs, rng: np.random.Generator, noise=None):
    """Unclipped action (environment units) and the log density of that pre-clip action."""
    mu, _ = forward_cache(policy.mean, obs)
    mu = mu[0]
    z = rng.standard_normal(mu.shape) if noise is None else np.asarray(noise, dtype=np.float64)
    u = mu + np.exp(policy.log_std) * z
    return policy.denormalize(u), float(gaussian_log_prob(u, mu, policy.log_std))


def sample_explore_action(policy: ExplorePolicy, obs, rng: np.random.Generator, noise=None):
    """Returns ``(clipped action, log_prob of the pre-clip action)``. ``noise`` overrides z."""
    a, lp = propose_explore_action(policy, obs, rng, noise)
    return np.clip(a, policy.low, policy.high), lp


def _raw_actions(traj: Trajectory) -> np.ndarray:
    return traj.act if traj.raw_act is None else traj.raw_act


def log_prob_objective_grad(policy: ExplorePolicy, obs: np.ndarray, raw_act: np.ndarray, weight: float,
                            mean: Optional[MlpParams] = None, log_std: Optional[np.ndarray] = None):
    """weight * sum_t log pi_e(a_t | s_t) and its gradient w.r.t. (mean params..., log_std)."""
    mean = policy.mean if mean is None else mean
    log_std = policy.log_std if log_std is None else log_std
    mu, cache = forward_cache(mean, obs)
    u = policy.normalize(raw_act)
    inv_std = np.exp(-log_std)
    z = (u - mu) * inv_std
    obj = weight * float((-0.5 * z * z - log_std - HALF_LOG_2PI).sum())
    dmu = weight * z * inv_std
    dlog_std = weight * (z * z - 1.0).sum(axis=0)
    grads = backward_cache(mean, cache, dmu)
    return obj, grads.tensors + [dlog_std]


def explore_policy_update(policy: ExplorePolicy, traj: Trajectory, advantage: float) -> float:
    """One Adam step ascending advantage * sum_t log pi_e(a_t|s_t). Returns -objective before the step."""
    if not np.isfinite(advantage):
        raise NonFiniteError(f"advantage is {advantage}")
    obj, grads = log_prob_objective_grad(policy, traj.obs, _raw_actions(traj), advantage)
    neg = [-g for g in grads]
    tensors, policy.opt = adam_update(policy.tensors(), neg, policy.opt, policy.lr, policy.clip_norm)
    policy.set_tensors(tensors)
    return -obj


@dataclass
class MetaQNet:
    net: MlpParams
    target: MlpParams
    opt: AdamState
    gamma: float = 0.9
    lr: float = 1e-3
    tau: float = 0.005
    clip_norm: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("meta discount must lie in (0, 1)")

    def copy(self) -> "MetaQNet":
        return replace(self, net=self.net.copy(), target=self.target.copy(), opt=self.opt.copy())


def make_metaq(obs_dim: int, act_dim: int, rng: np.random.Generator, hidden: Sequence[int] = (64, 64),
               layer_norm: bool = True, **kw) -> MetaQNet:
    net = init_mlp([obs_dim + act_dim, *hidden, 1], rng, layer_norm)
    return MetaQNet(net, net.copy(), AdamState.zeros_like(net.tensors()), **kw)


@dataclass
class MetaMemory:
    traj: Optional[Trajectory] = None
    meta_reward: float = 0.0
    qsum: float = 0.0
    valid: bool = False


@dataclass
class CvReport:
    gain: float
    cost: float
    advantage: float
    gain_meta: float
    cost_meta: float
    immediate: float
    beta_immediate: float


def counterfactual_relabel(traj: Trajectory, actor: Callable[[np.ndarray], np.ndarray]) -> Trajectory:
    """Same states, actions replaced by ``actor(s)``; rewards and next states are kept but stale."""
    if len(traj) == 0:
        raise ValueError("cannot relabel an empty trajectory")
    act = np.asarray(actor(traj.obs), dtype=np.float64).reshape(traj.act.shape)
    return replace(traj, act=act, raw_act=None, log_prob=np.full(len(traj), np.nan), counterfactual=True)


def traj_meta_q(net: MetaQNet, pairs: np.ndarray, use_target: bool = False) -> float:
    """Sum of the meta-Q estimate over ``s || a`` rows."""
    pairs = np.atleast_2d(pairs)
    if len(pairs) == 0:
        raise ValueError("no state-action pairs")
    out, _ = forward_cache(net.target if use_target else net.net, pairs)
    return float(out.sum())


def counterfactual_value(exploit: ExploitAgent, explore: Optional[ExplorePolicy], metaq: MetaQNet,
                         traj: Trajectory, beta: float, gain_only: bool = False) -> CvReport:
    """Gain, cost and advantage of an exploration trajectory against the exploitation actor.

    The exploration branch reuses the recorded actions; the exploitation branch relabels each
    state with the deterministic actor. ``gain_only`` keeps just the meta-Q gain (MA2C ablation).
    """
    if len(traj) == 0:
        raise ValueError("empty exploration trajectory")
    if traj.source != "explore":
        raise ValueError("counterfactual value needs an exploration trajectory")
    pi_traj = counterfactual_relabel(traj, exploit.act)
    gain_meta = traj_meta_q(metaq, traj.pairs())
    if gain_only:
        return CvReport(gain_meta, 0.0, gain_meta - 0.0, gain_meta, 0.0, 0.0, 0.0)
    cost_meta = traj_meta_q(metaq, pi_traj.pairs())
    q_explore = float(exploit.q(traj.obs, traj.act).sum())
    q_exploit = float(exploit.q(traj.obs, pi_traj.act).sum())
    gain = gain_meta + beta * q_explore
    cost = cost_meta + beta * q_exploit
    immediate = q_explore - q_exploit
    return CvReport(gain, cost, gain - cost, gain_meta, cost_meta, immediate, beta * immediate)


def metaq_loss_value(current_sum: float, previous_sum: float, previous_reward: float, gamma: float) -> float:
    """(S_t - (S_{t-1} - R_{t-1}) / gamma)^2."""
    return (current_sum - (previous_sum - previous_reward) / gamma) ** 2


def metaq_loss_grad(metaq: MetaQNet, memory: MetaMemory, traj: Trajectory, params: Optional[MlpParams] = None):
    """Loss and gradient w.r.t. the online net; the previous-iteration term is a target-net constant."""
    params = metaq.net if params is None else params
    prev = traj_meta_q(metaq, memory.traj.pairs(), use_target=True)
    target = (prev - memory.meta_reward) / metaq.gamma
    out, cache = forward_cache(params, traj.pairs())
    diff = float(out.sum()) - target
    grads = backward_cache(params, cache, np.full(out.shape, 2.0 * diff))
    return diff * diff, grads


def metaq_update(metaq: MetaQNet, memory: MetaMemory, traj: Trajectory) -> float:
    """One Adam step on the meta-Q recursion loss. Returns the pre-step loss.

    The caller soft-updates the target afterwards (``soft_update_metaq``).
    """
    if not memory.valid or memory.traj is None:
        raise ValueError("meta memory is empty; meta-Q updates start at the second iteration")
    loss, grads = metaq_loss_grad(metaq, memory, traj)
    if not np.isfinite(loss):
        raise NonFiniteError(f"meta-Q loss is {loss}")
    tensors, metaq.opt = adam_update(metaq.net.tensors(), grads.tensors, metaq.opt, metaq.lr, metaq.clip_norm)
    metaq.net = metaq.net.with_tensors(tensors)
    return loss


def soft_update_metaq(metaq: MetaQNet) -> None:
    metaq.target = soft_update(metaq.target, metaq.net, metaq.tau)
