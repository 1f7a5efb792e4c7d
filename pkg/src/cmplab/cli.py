"""Command line: ``run``, ``sweep`` and ``gradcheck``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure (including NaN aborts), 3 IO error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import csvlog, gradcheck
from .config import ALGOS, ConfigError, RunConfig, parse_config
from .nn import NonFiniteError
from .train import TrainingAborted, train

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3


def resolve_arm(name: str) -> Tuple[str, Optional[float]]:
    """Map an arm name (``ddpg``, ``ma2c``, ``cmp``, ``cmp-<beta>``) to (algo, beta override)."""
    if name in ALGOS:
        return name, None
    if name.startswith("cmp-"):
        try:
            beta = float(name[4:])
        except ValueError:
            raise ConfigError("algo", f"bad arm name {name!r}") from None
        return "cmp", beta
    raise ConfigError("algo", f"unknown arm {name!r}; use ddpg, ma2c, cmp or cmp-<beta>")


def run_csv_path(cfg: RunConfig, out_dir: Optional[str] = None) -> str:
    return os.path.join(out_dir or cfg.out_dir, f"run_{cfg.algo}_{cfg.env}_seed{cfg.seed}.csv")


def _overrides(args) -> dict:
    ov = {}
    for key in ("seed", "beta", "env", "out", "iterations"):
        value = getattr(args, key, None)
        if value is not None:
            ov[key] = value
    if getattr(args, "algo", None):
        algo, beta = resolve_arm(args.algo)
        ov["algo"] = algo
        if beta is not None and "beta" not in ov:
            ov["beta"] = beta
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(item, "--set expects key=value")
        k, v = item.split("=", 1)
        ov[k.strip()] = v.strip()
    return ov


def execute_run(cfg: RunConfig, out_dir: Optional[str] = None) -> str:
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    path = run_csv_path(cfg, out_dir)
    train(cfg, csv_path=path)
    return path


def cmd_run(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    path = execute_run(cfg)
    print(path)
    return EXIT_OK


def _sweep_cell(job):
    arm, cfg, out_dir = job
    try:
        path = execute_run(cfg, out_dir)
        rows = csvlog.read_run_csv(path)
        return arm, cfg.seed, csvlog.final_performance(rows, cfg.summary_last_k), None
    except (TrainingAborted, NonFiniteError, FloatingPointError, OSError, ValueError) as exc:
        return arm, cfg.seed, math.nan, f"{type(exc).__name__}: {exc}"


def sweep(base: RunConfig, seeds: Sequence[int], arms: Sequence[str], jobs: int = 1, echo=print):
    """Run every (arm, seed) cell and write ``<out>/sweep_summary.csv``. Returns (summary rows, failures)."""
    cells = []
    for arm in arms:
        algo, beta = resolve_arm(arm)
        cfg = base.replace(algo=algo, beta=base.beta if beta is None else beta)
        for seed in seeds:
            cells.append((arm, cfg.replace(seed=seed), os.path.join(base.out_dir, arm)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]

    rows, failures = [], []
    for arm in arms:
        algo, beta = resolve_arm(arm)
        mine = [r for r in results if r[0] == arm]
        finals = [r[2] for r in mine if r[3] is None]
        failures += [(arm, r[1], r[3]) for r in mine if r[3] is not None]
        rows.append(dict(
            preset=arm, algo=algo, beta=base.beta if beta is None else beta, env=base.env,
            seeds=len(finals), failed=len(mine) - len(finals),
            final_mean=float(np.mean(finals)) if finals else None,
            final_std=float(np.std(finals, ddof=1)) if len(finals) > 1 else (0.0 if finals else None),
            last_k=base.summary_last_k,
        ))
    for arm, seed, msg in failures:
        echo(f"cell {arm} seed {seed} failed: {msg}", file=sys.stderr)
    os.makedirs(base.out_dir, exist_ok=True)
    csvlog.write_summary(os.path.join(base.out_dir, "sweep_summary.csv"), rows)
    return rows, failures


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def cmd_sweep(args) -> int:
    base = parse_config(args.config, _overrides(args))
    try:
        seeds = _int_list(args.seeds)
    except ValueError:
        raise ConfigError("seeds", f"expected comma-separated integers, got {args.seeds!r}") from None
    if not seeds:
        raise ConfigError("seeds", "need at least one seed")
    arms = [a.strip() for a in args.algos.split(",") if a.strip()]
    for arm in arms:
        resolve_arm(arm)
    rows, failures = sweep(base, seeds, arms, args.jobs)
    for row in rows:
        print(f"{row['preset']:<8s} {csvlog.format_value(row['final_mean'])} +/- {csvlog.format_value(row['final_std'])}"
              f"  (seeds={row['seeds']}, failed={row['failed']})")
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_gradcheck(args) -> int:
    return gradcheck.run(args.seed)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmplab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--beta", type=float)
        sp.add_argument("--env")
        sp.add_argument("--out", help="output directory (fallback: $CMP_OUT_DIR, then ./runs)")
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")

    run = sub.add_parser("run", help="train one configuration and write its CSV")
    common(run)
    run.add_argument("--seed", type=int)
    run.add_argument("--algo", help="ddpg, ma2c, cmp or cmp-<beta>")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="run arms x seeds and summarize final performance")
    common(sw)
    sw.add_argument("--seeds", required=True, help="comma-separated seeds, e.g. 0,1,2")
    sw.add_argument("--algos", default="ddpg,ma2c,cmp-0,cmp-1", help="comma-separated arms")
    sw.add_argument("--jobs", type=int, default=1, help="concurrent cells")
    sw.set_defaults(func=cmd_sweep)

    gc = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAborted, NonFiniteError, FloatingPointError) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
