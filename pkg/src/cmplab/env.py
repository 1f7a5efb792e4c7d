"""Deterministic continuous-control environments with value-semantics reset/step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ENV_NAMES = ("pendulum", "sparse-point-mass", "quadratic-bandit")

# pendulum constants (Pendulum-v0)
G, M, L, DT = 10.0, 1.0, 1.0, 0.05
MAX_SPEED, MAX_TORQUE = 8.0, 2.0

GOAL = np.array([0.8, 0.8])
GOAL_RADIUS = 0.1
POINT_STEP = 0.05


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    act_dim: int
    low: np.ndarray
    high: np.ndarray
    max_steps: int

    def __post_init__(self):
        if self.name not in ENV_NAMES:
            raise ValueError(f"unknown environment {self.name!r}")
        if not (np.all(np.isfinite(self.low)) and np.all(np.isfinite(self.high))):
            raise ValueError("action bounds must be finite")
        if np.any(self.low >= self.high):
            raise ValueError("action bounds need low < high")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class EnvState:
    x: np.ndarray
    t: int = 0
    clip_count: int = 0


def make_env(name: str) -> EnvSpec:
    if name == "pendulum":
        return EnvSpec(name, 3, 1, np.array([-MAX_TORQUE]), np.array([MAX_TORQUE]), 200)
    if name == "sparse-point-mass":
        return EnvSpec(name, 2, 2, -np.ones(2), np.ones(2), 100)
    if name == "quadratic-bandit":
        return EnvSpec(name, 1, 1, -np.ones(1), np.ones(1), 1)
    raise ValueError(f"unknown environment {name!r}; choose from {', '.join(ENV_NAMES)}")


def angle_wrap(theta: float) -> float:
    """Map an angle into [-pi, pi)."""
    return ((theta + math.pi) % (2.0 * math.pi)) - math.pi


def bandit_optimum(s):
    return 0.5 * np.asarray(s)


def observe(spec: EnvSpec, state: EnvState) -> np.ndarray:
    if spec.name == "pendulum":
        th, thdot = state.x
        return np.array([math.cos(th), math.sin(th), thdot])
    return state.x.copy()


def reset(spec: EnvSpec, rng: np.random.Generator):
    """Draw an initial state. Returns ``(state, observation)``."""
    if spec.name == "pendulum":
        x = np.array([rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)])
    elif spec.name == "sparse-point-mass":
        x = np.zeros(2)
    else:
        x = np.array([rng.uniform(-1.0, 1.0)])
    state = EnvState(x)
    return state, observe(spec, state)


def step(spec: EnvSpec, state: EnvState, action):
    """Advance one step. Returns ``(state, observation, reward, done)``.

    Out-of-bounds actions are clipped and counted in ``state.clip_count``.
    """
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape != (spec.act_dim,):
        raise ValueError(f"{spec.name}: expected action of dim {spec.act_dim}, got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{spec.name}: non-finite action {a}")
    clipped = np.clip(a, spec.low, spec.high)
    clips = state.clip_count + int(np.any(clipped != a))
    t = state.t + 1

    if spec.name == "pendulum":
        th, thdot = state.x
        u = float(clipped[0])
        reward = -(angle_wrap(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2)
        thdot = thdot + (3.0 * G / (2.0 * L) * math.sin(th) + 3.0 / (M * L**2) * u) * DT
        thdot = min(max(thdot, -MAX_SPEED), MAX_SPEED)
        th = th + thdot * DT
        x = np.array([th, thdot])
        done = t >= spec.max_steps
    elif spec.name == "sparse-point-mass":
        x = np.clip(state.x + POINT_STEP * clipped, -1.0, 1.0)
        reached = float(np.linalg.norm(x - GOAL)) < GOAL_RADIUS
        reward = 1.0 if reached else 0.0
        done = reached or t >= spec.max_steps
    else:
        s = float(state.x[0])
        reward = -((float(clipped[0]) - 0.5 * s) ** 2)
        x = state.x.copy()
        done = True

    new = EnvState(x, t, clips)
    return new, observe(spec, new), float(reward), bool(done)
