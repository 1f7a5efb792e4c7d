"""Trajectories, rollouts, a FIFO replay buffer and noise-free policy evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple, Optional, Tuple

import numpy as np

from . import env as envlib
from .env import EnvSpec

ActionFn = Callable[[np.ndarray], Tuple[np.ndarray, Optional[float]]]


class Transition(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    log_prob: Optional[float] = None


@dataclass
class Trajectory:
    """Column-stored transitions. ``log_prob`` is NaN where no log-density was recorded."""

    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    log_prob: np.ndarray
    source: str = "explore"
    iteration: int = 0
    counterfactual: bool = False
    raw_act: Optional[np.ndarray] = None  # actions as proposed, before clipping

    def __len__(self) -> int:
        return len(self.rew)

    def __iter__(self) -> Iterator[Transition]:
        for k in range(len(self)):
            lp = None if np.isnan(self.log_prob[k]) else float(self.log_prob[k])
            yield Transition(self.obs[k], self.act[k], float(self.rew[k]), self.next_obs[k], bool(self.done[k]), lp)

    @classmethod
    def empty(cls, obs_dim: int, act_dim: int, source: str = "explore", iteration: int = 0) -> "Trajectory":
        return cls(
            np.zeros((0, obs_dim)), np.zeros((0, act_dim)), np.zeros(0), np.zeros((0, obs_dim)),
            np.zeros(0, dtype=bool), np.zeros(0), source, iteration,
        )

    @classmethod
    def from_transitions(cls, items, source: str = "explore", iteration: int = 0) -> "Trajectory":
        items = list(items)
        return cls(
            np.array([t.s for t in items], dtype=np.float64),
            np.array([t.a for t in items], dtype=np.float64),
            np.array([t.r for t in items], dtype=np.float64),
            np.array([t.s_next for t in items], dtype=np.float64),
            np.array([t.done for t in items], dtype=bool),
            np.array([np.nan if t.log_prob is None else t.log_prob for t in items], dtype=np.float64),
            source,
            iteration,
        )

    def pairs(self) -> np.ndarray:
        """State-action pairs stacked as ``s || a`` rows."""
        return np.concatenate([self.obs, self.act], axis=1)

    def episode_returns(self) -> list:
        """Undiscounted returns of the episodes that finished inside this trajectory."""
        returns, acc = [], 0.0
        for r, d in zip(self.rew, self.done):
            acc += r
            if d:
                returns.append(acc)
                acc = 0.0
        return returns


def rollout(spec: EnvSpec, action_fn: ActionFn, steps: int, rng: np.random.Generator,
            source: str = "explore", iteration: int = 0) -> Trajectory:
    """Collect exactly ``steps`` transitions, resetting at the start and after every ``done``.

    ``rng`` drives environment resets only; ``action_fn`` owns its own noise. Actions are
    clipped to the bounds before being applied and recorded; the unclipped values are kept
    in ``raw_act``.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    obs = np.zeros((steps, spec.obs_dim))
    act = np.zeros((steps, spec.act_dim))
    rew = np.zeros(steps)
    nxt = np.zeros((steps, spec.obs_dim))
    done = np.zeros(steps, dtype=bool)
    logp = np.full(steps, np.nan)
    raw = np.zeros((steps, spec.act_dim))
    if steps:
        state, o = envlib.reset(spec, rng)
    for k in range(steps):
        a, lp = action_fn(o)
        raw[k] = np.asarray(a, dtype=np.float64).reshape(spec.act_dim)
        a = np.clip(raw[k], spec.low, spec.high)
        state, o2, r, d = envlib.step(spec, state, a)
        obs[k], act[k], rew[k], nxt[k], done[k] = o, a, r, o2, d
        if lp is not None:
            logp[k] = lp
        if d:
            state, o = envlib.reset(spec, rng)
        else:
            o = o2
    return Trajectory(obs, act, rew, nxt, done, logp, source, iteration, raw_act=raw)


def evaluate_policy(spec: EnvSpec, actor: Callable[[np.ndarray], np.ndarray], eval_steps: int,
                    rng: np.random.Generator, iteration: int = 0):
    """Mean undiscounted return of the deterministic ``actor`` over completed episodes.

    Returns ``(R, trajectory)``; a trailing partial episode is kept in the trajectory but not in R.
    """
    if eval_steps < 1:
        raise ValueError("eval_steps must be >= 1")
    traj = rollout(spec, lambda o: (actor(o), None), eval_steps, rng, source="exploit", iteration=iteration)
    returns = traj.episode_returns()
    if not returns:
        raise ValueError(
            f"no episode completed within eval_steps={eval_steps}; "
            f"use at least {spec.max_steps} for {spec.name}"
        )
    return float(np.mean(returns)), traj


class Batch(NamedTuple):
    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    @property
    def size(self) -> int:
        # not __len__: NamedTuple._make relies on the tuple length
        return len(self.rew)


class ReplayBuffer:
    """Bounded FIFO of transitions backed by ring arrays."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def add(self, traj: Trajectory) -> None:
        n = len(traj)
        if n == 0:
            return
        cols = (traj.obs, traj.act, traj.rew, traj.next_obs, traj.done)
        if n > self.capacity:
            cols = tuple(c[n - self.capacity :] for c in cols)
            self.inserted += n - self.capacity
            n = self.capacity
        idx = (self.inserted + np.arange(n)) % self.capacity
        for dst, src in zip((self.obs, self.act, self.rew, self.next_obs, self.done), cols):
            dst[idx] = src
        self.inserted += n

    def _order(self) -> np.ndarray:
        """Ring indices from oldest to newest."""
        size = len(self)
        start = self.inserted - size
        return (start + np.arange(size)) % self.capacity

    def contents(self) -> Batch:
        idx = self._order()
        return Batch(self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx], self.done[idx])

    def transitions(self) -> list:
        b = self.contents()
        return [Transition(b.obs[k], b.act[k], float(b.rew[k]), b.next_obs[k], bool(b.done[k])) for k in range(b.size)]

    def copy(self) -> "ReplayBuffer":
        other = ReplayBuffer.__new__(ReplayBuffer)
        other.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()})
        return other


def buffer_union(buffer: ReplayBuffer, *trajs: Trajectory) -> ReplayBuffer:
    """Append trajectories in order, evicting oldest-first past capacity (mutates and returns ``buffer``)."""
    for traj in trajs:
        buffer.add(traj)
    return buffer


def sample_batch(buffer, n: int, rng: np.random.Generator) -> Batch:
    """``n`` uniform draws with replacement. Accepts a ReplayBuffer or a Trajectory."""
    size = len(buffer)
    if size == 0:
        raise ValueError("cannot sample from an empty buffer")
    idx = rng.integers(0, size, size=n)
    if isinstance(buffer, Trajectory):
        return Batch(buffer.obs[idx], buffer.act[idx], buffer.rew[idx], buffer.next_obs[idx], buffer.done[idx])
    ring = buffer._order()[idx]
    return Batch(buffer.obs[ring], buffer.act[ring], buffer.rew[ring], buffer.next_obs[ring], buffer.done[ring])
