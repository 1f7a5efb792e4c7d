"""The meta-episode loop: explore, provisional update, evaluate, meta-updates, buffered training."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import csvlog
from .cmp import (
    ExplorePolicy,
    MetaMemory,
    MetaQNet,
    counterfactual_value,
    explore_policy_update,
    make_explore_policy,
    make_metaq,
    metaq_update,
    propose_explore_action,
    soft_update_metaq,
    traj_meta_q,
)
from .config import RunConfig, derive_seeds
from .ddpg import ExploitAgent, gaussian_noise_action, make_agent, updater
from .env import EnvSpec, make_env
from .nn import NonFiniteError
from .rl import ReplayBuffer, Trajectory, buffer_union, evaluate_policy, rollout


class TrainingAborted(RuntimeError):
    """A non-finite quantity stopped the run; ``record`` holds the partial iteration."""

    def __init__(self, msg: str, record: Optional["IterationRecord"] = None):
        super().__init__(msg)
        self.record = record


@dataclass
class IterationRecord:
    iteration: int
    env_steps: int
    meta_reward: float
    eval_return_provisional: float
    eval_return: float
    cv_gain: Optional[float] = None
    cv_cost: Optional[float] = None
    advantage: Optional[float] = None
    metaq_loss: Optional[float] = None
    explore_loss: Optional[float] = None
    log_std_mean: Optional[float] = None
    wallclock_s: float = 0.0
    # not part of the CSV
    immediate: Optional[float] = None
    explore_return: float = 0.0
    goal_reaches: int = 0


@dataclass
class TrainState:
    config: RunConfig
    spec: EnvSpec
    exploit: ExploitAgent
    explore: ExplorePolicy
    metaq: MetaQNet
    buffer: ReplayBuffer
    memory: MetaMemory
    perf: float
    rng_explore: np.random.Generator
    rng_eval: np.random.Generator
    rng_update: np.random.Generator
    iteration: int = 0
    env_steps: int = 0
    meta_ops: int = 0
    goal_reaches: int = 0

    @property
    def uses_meta(self) -> bool:
        return self.config.algo != "ddpg"


def compute_meta_reward(r_new: float, r_old: float) -> float:
    """Performance improvement of the updated policy over the previous one."""
    if not (np.isfinite(r_new) and np.isfinite(r_old)):
        raise NonFiniteError("meta reward needs finite returns")
    return r_new - r_old


def _count_goals(traj: Trajectory) -> int:
    return int(np.count_nonzero(traj.rew > 0.0))


def init_train(config: RunConfig, seed: Optional[int] = None) -> TrainState:
    """Build all networks, draw the first evaluation trajectory and seed the replay buffer with it."""
    if seed is not None and seed != config.seed:
        config = config.replace(seed=seed)
    seeds = derive_seeds(config.seed)
    rng_init = np.random.default_rng(seeds["init"])
    spec = make_env(config.env)
    hidden = tuple(config.hidden_sizes)
    exploit = make_agent(
        spec.obs_dim, spec.act_dim, spec.low, spec.high, rng_init, hidden, config.layer_norm,
        gamma=config.gamma, tau=config.tau_soft, actor_lr=config.actor_lr, critic_lr=config.critic_lr,
        clip_norm=config.grad_clip,
    )
    explore = make_explore_policy(
        spec.obs_dim, spec.act_dim, spec.low, spec.high, rng_init, hidden, config.explore_layer_norm,
        log_std_init=config.log_std_init, final_scale=config.explore_mean_scale, lr=config.explore_lr,
        clip_norm=config.grad_clip,
    )
    metaq = make_metaq(
        spec.obs_dim, spec.act_dim, rng_init, hidden, config.layer_norm,
        gamma=config.gamma_meta, lr=config.metaq_lr, tau=config.tau_soft, clip_norm=config.grad_clip,
    )
    rng_eval = np.random.default_rng(seeds["eval"])
    perf, traj0 = evaluate_policy(spec, exploit.act, config.eval_steps, rng_eval, iteration=0)
    buffer = ReplayBuffer(config.buffer_capacity, spec.obs_dim, spec.act_dim)
    buffer_union(buffer, traj0)
    return TrainState(
        config, spec, exploit, explore, metaq, buffer, MetaMemory(), perf,
        np.random.default_rng(seeds["explore"]), rng_eval, np.random.default_rng(seeds["update"]),
        env_steps=config.eval_steps, goal_reaches=_count_goals(traj0),
    )


def _explore_action_fn(state: TrainState) -> Callable:
    cfg = state.config
    if cfg.algo == "ddpg":
        sigma = cfg.sigma * 0.5 * (state.spec.high - state.spec.low)
        return lambda o: (gaussian_noise_action(state.exploit, o, sigma, state.rng_explore), None)
    return lambda o: propose_explore_action(state.explore, o, state.rng_explore)


def _meta_phase(state: TrainState, traj: Trajectory, rec: IterationRecord) -> None:
    cfg = state.config
    metaq, memory = state.metaq, state.memory
    reports, mlosses, elosses = [], [], []
    for _ in range(cfg.explore_update_times):
        if memory.valid:
            for _ in range(cfg.metaq_update_times):
                mlosses.append(metaq_update(metaq, memory, traj))
                soft_update_metaq(metaq)
                state.meta_ops += 1
        rep = counterfactual_value(state.exploit, state.explore, metaq, traj, cfg.beta,
                                   gain_only=cfg.algo == "ma2c")
        state.meta_ops += 1
        reports.append(rep)
        if not memory.valid:
            break  # nothing changes until the memory is filled
        adv = rep.advantage / len(traj) if cfg.normalize_advantage else rep.advantage
        elosses.append(explore_policy_update(state.explore, traj, adv))
        state.meta_ops += 1
    if reports:
        rec.cv_gain = float(np.mean([r.gain for r in reports]))
        rec.cv_cost = float(np.mean([r.cost for r in reports]))
        rec.advantage = float(np.mean([r.advantage for r in reports]))
        rec.immediate = float(np.mean([r.immediate for r in reports]))
    if mlosses:
        rec.metaq_loss = float(np.mean(mlosses))
    if elosses:
        rec.explore_loss = float(np.mean(elosses))
    rec.log_std_mean = float(state.explore.log_std.mean())


def run_iteration(state: TrainState):
    """One pass of the meta-episode loop. Mutates and returns ``state`` with the iteration record."""
    cfg = state.config
    t0 = time.perf_counter()
    i = state.iteration + 1
    steps_before = state.buffer.inserted

    traj = rollout(state.spec, _explore_action_fn(state), cfg.exploration_steps, state.rng_explore,
                   source="explore", iteration=i)
    # provisional update from this trajectory alone
    if len(traj):
        updater(state.exploit, traj, cfg.exploit_update_times, cfg.batch_size, state.rng_update)
    assert state.buffer.inserted == steps_before
    r_prov, eval_traj = evaluate_policy(state.spec, state.exploit.act, cfg.eval_steps, state.rng_eval, i)
    meta_reward = compute_meta_reward(r_prov, state.perf)

    rec = IterationRecord(i, 0, meta_reward, r_prov, float("nan"),
                          explore_return=float(traj.rew.sum()))
    if state.uses_meta and len(traj):
        _meta_phase(state, traj, rec)

    buffer_union(state.buffer, traj, eval_traj)
    if len(state.buffer):
        updater(state.exploit, state.buffer, cfg.exploit_update_times, cfg.batch_size, state.rng_update)
    r_hat, final_traj = evaluate_policy(state.spec, state.exploit.act, cfg.eval_steps, state.rng_eval, i)
    state.perf = r_hat

    if state.uses_meta and len(traj):
        state.memory = MetaMemory(traj, meta_reward, traj_meta_q(state.metaq, traj.pairs()), True)
    state.iteration = i
    state.env_steps += cfg.steps_per_iteration
    state.goal_reaches += _count_goals(traj) + _count_goals(eval_traj) + _count_goals(final_traj)

    rec.eval_return = r_hat
    rec.env_steps = state.env_steps
    rec.goal_reaches = state.goal_reaches
    rec.wallclock_s = time.perf_counter() - t0
    bad = [k for k, v in csvlog.record_values(rec).items() if isinstance(v, float) and not np.isfinite(v)]
    if bad:
        raise TrainingAborted(f"iteration {i}: non-finite {', '.join(bad)}", rec)
    return state, rec


def train(config: RunConfig, seed: Optional[int] = None, csv_path: Optional[str] = None,
          on_record: Optional[Callable[[IterationRecord], None]] = None) -> List[IterationRecord]:
    """Run ``config.iterations`` iterations; rows are flushed to ``csv_path`` as they are produced."""
    state = init_train(config, seed)
    records: List[IterationRecord] = []
    writer = csvlog.CsvWriter(csv_path, state.config.log_wallclock) if csv_path else None
    try:
        for _ in range(state.config.iterations):
            try:
                state, rec = run_iteration(state)
            except (NonFiniteError, FloatingPointError) as exc:
                raise TrainingAborted(f"iteration {state.iteration + 1}: {exc}") from exc
            records.append(rec)
            if writer:
                writer.write(rec)
            if on_record:
                on_record(rec)
    except TrainingAborted as exc:
        if writer and exc.record is not None:
            writer.write(exc.record)
        exc.records = records
        raise
    finally:
        if writer:
            writer.close()
    return records
