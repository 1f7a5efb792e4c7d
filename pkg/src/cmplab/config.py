"""Run configuration: flat ``key = value`` files, flag overrides, validation, rendering."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from typing import Dict, Optional, Tuple

from .env import ENV_NAMES

ALGOS = ("ddpg", "ma2c", "cmp")
DEFAULT_OUT = "runs"

# larger exploration/evaluation/update tuple for long-episode tasks
PRESETS = {
    "small": dict(exploration_steps=100, eval_steps=200, exploit_update_times=50, explore_update_times=50),
    "large": dict(exploration_steps=1000, eval_steps=2000, exploit_update_times=500, explore_update_times=500),
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    env: str = "pendulum"
    algo: str = "cmp"
    beta: float = 1.0
    iterations: int = 100
    exploration_steps: int = 100
    eval_steps: int = 200
    exploit_update_times: int = 50
    explore_update_times: int = 50
    metaq_update_times: int = 5
    gamma: float = 0.99
    gamma_meta: float = 0.9
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    metaq_lr: float = 1e-3
    explore_lr: float = 1e-4
    tau_soft: float = 0.005
    buffer_capacity: int = 100_000
    batch_size: int = 64
    hidden_sizes: Tuple[int, ...] = (64, 64)
    layer_norm: bool = True
    explore_layer_norm: bool = True
    sigma: float = 0.1
    log_std_init: float = -0.7
    explore_mean_scale: float = 1.0  # only the exploitation actor gets the 1e-3 output scaling
    normalize_advantage: bool = True
    grad_clip: Optional[float] = None
    seed: int = 0
    out: str = ""
    log_wallclock: bool = False
    summary_last_k: int = 10

    def __post_init__(self):
        validate(self)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    @property
    def out_dir(self) -> str:
        return self.out or os.environ.get("CMP_OUT_DIR") or DEFAULT_OUT

    @property
    def steps_per_iteration(self) -> int:
        return self.exploration_steps + 2 * self.eval_steps


KEYS = {f.name: f for f in fields(RunConfig)}
COUNT_KEYS = ("iterations", "exploration_steps", "eval_steps", "exploit_update_times",
              "explore_update_times", "metaq_update_times", "summary_last_k")


def validate(cfg: RunConfig) -> None:
    if cfg.env not in ENV_NAMES:
        raise ConfigError("env", f"must be one of {', '.join(ENV_NAMES)}, got {cfg.env!r}")
    if cfg.algo not in ALGOS:
        raise ConfigError("algo", f"must be one of {', '.join(ALGOS)}, got {cfg.algo!r}")
    if not cfg.beta >= 0:
        raise ConfigError("beta", f"must be >= 0, got {cfg.beta}")
    for key in COUNT_KEYS:
        if getattr(cfg, key) < 0:
            raise ConfigError(key, "must be >= 0")
    if cfg.iterations < 1:
        raise ConfigError("iterations", "must be >= 1")
    if cfg.eval_steps < 1:
        raise ConfigError("eval_steps", "must be >= 1")
    for key in ("gamma", "gamma_meta"):
        if not 0.0 < getattr(cfg, key) < 1.0:
            raise ConfigError(key, "must lie in (0, 1)")
    for key in ("actor_lr", "critic_lr", "metaq_lr", "explore_lr"):
        if not getattr(cfg, key) >= 0:
            raise ConfigError(key, "must be >= 0")
    if not 0.0 < cfg.tau_soft <= 1.0:
        raise ConfigError("tau_soft", "must lie in (0, 1]")
    if cfg.buffer_capacity < 1:
        raise ConfigError("buffer_capacity", "must be >= 1")
    if cfg.batch_size < 1:
        raise ConfigError("batch_size", "must be >= 1")
    if not cfg.hidden_sizes or any(h < 1 for h in cfg.hidden_sizes):
        raise ConfigError("hidden_sizes", "needs at least one positive width")
    if not cfg.sigma >= 0:
        raise ConfigError("sigma", "must be >= 0")
    if not -5.0 <= cfg.log_std_init <= 2.0:
        raise ConfigError("log_std_init", "must lie in [-5, 2]")
    if not cfg.explore_mean_scale > 0:
        raise ConfigError("explore_mean_scale", "must be > 0")
    if cfg.grad_clip is not None and not cfg.grad_clip > 0:
        raise ConfigError("grad_clip", "must be > 0 or none")


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def coerce(key: str, value):
    """Convert a raw (usually string) value to the type of config field ``key``."""
    if key not in KEYS:
        raise ConfigError(key, "unknown key")
    if not isinstance(value, str):
        return tuple(value) if key == "hidden_sizes" else value
    text = value.strip()
    default = KEYS[key].default
    try:
        if key == "hidden_sizes":
            return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
        if key == "grad_clip":
            return None if text.lower() in ("none", "") else float(text)
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {value!r} ({exc})") from None


def read_config_file(path: str) -> Dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    raw: Dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
            key, value = (p.strip() for p in line.split("=", 1))
            raw[key] = value
    return raw


def parse_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then an optional ``preset``, then the file, then flag overrides."""
    layers = [read_config_file(path) if path else {}, dict(overrides or {})]
    preset = None
    for layer in layers:
        if layer.get("preset") is not None:
            preset = str(layer.pop("preset")).strip()
        else:
            layer.pop("preset", None)
    values: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"must be one of {', '.join(PRESETS)}, got {preset!r}")
        values.update(PRESETS[preset])
    for layer in layers:
        for key, value in layer.items():
            if value is None:
                continue
            values[key] = coerce(key, value)
    return RunConfig(**values)


def render_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "hidden_sizes":
            text = ",".join(str(h) for h in value)
        elif value is None:
            text = "none"
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> Tuple[int, int]:
    """One splitmix64 step. Returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


STREAMS = ("init", "explore", "eval", "update")


def derive_seeds(master: int) -> Dict[str, int]:
    """Per-stream 64-bit seeds: successive splitmix64 outputs from the master seed, in STREAMS order."""
    state = master & MASK64
    seeds = {}
    for name in STREAMS:
        state, seeds[name] = splitmix64(state)
    return seeds
