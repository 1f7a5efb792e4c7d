"""Per-iteration CSV rows and the sweep summary table."""

from __future__ import annotations

import csv
import math
from typing import Dict, List, Optional

COLUMNS = (
    "iteration", "env_steps", "meta_reward", "eval_return_provisional", "eval_return",
    "cv_gain", "cv_cost", "advantage", "metaq_loss", "explore_loss", "log_std_mean", "wallclock_s",
)
NA = "NA"


def format_value(value) -> str:
    if value is None:
        return NA
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    # repr gives the shortest round-tripping form, always with '.' as decimal mark
    return repr(float(value))


def record_values(rec) -> Dict[str, object]:
    return {c: getattr(rec, c) for c in COLUMNS}


def format_row(values) -> str:
    return ",".join(format_value(v) for v in values) + "\n"


class CsvWriter:
    """Writes the header on open and flushes after every row, so a crash leaves a valid prefix.

    Wallclock is written as NA unless ``log_wallclock`` is set, which keeps reruns byte-identical.
    """

    def __init__(self, path: str, log_wallclock: bool = False):
        self.fh = open(path, "w", encoding="utf-8", newline="")
        self.log_wallclock = log_wallclock
        self.fh.write(",".join(COLUMNS) + "\n")
        self.fh.flush()

    def write(self, rec) -> None:
        values = record_values(rec)
        if not self.log_wallclock:
            values["wallclock_s"] = None
        self.fh.write(format_row(values[c] for c in COLUMNS))
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def parse_cell(text: str) -> Optional[float]:
    return None if text == NA else float(text)


def read_run_csv(path: str) -> List[Dict[str, Optional[float]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        return [{k: parse_cell(v) for k, v in zip(header, row)} for row in reader]


def final_performance(rows, last_k: int) -> float:
    """Mean of the last ``last_k`` post-update evaluation returns."""
    vals = [r["eval_return"] for r in rows if r["eval_return"] is not None]
    if not vals:
        return math.nan
    tail = vals[-last_k:] if last_k > 0 else vals
    return sum(tail) / len(tail)


SUMMARY_COLUMNS = ("preset", "algo", "beta", "env", "seeds", "failed", "final_mean", "final_std", "last_k")


def write_summary(path: str, rows: List[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for row in rows:
            fh.write(format_row(row.get(c) for c in SUMMARY_COLUMNS))
