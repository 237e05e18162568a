"""Training metrics: append-only CSV with a strict step ordering contract."""

from __future__ import annotations

import csv
import json
import os

from planrl.errors import UsageError

BASE_COLUMNS = [
    "step", "updates", "alpha", "eps_mean", "episode_return",
    "episode_length", "policy_loss", "value_loss", "model_loss",
    "entropy", "clip_fraction", "approx_kl", "planner_score",
]


class MetricsWriter:
    """One row per update; the step column must strictly increase.

    Per-task return columns (return/<task_id>) sit after the shared block.
    Missing values are written as empty cells so sparse columns (eval rows,
    tasks with no finished episode this round) stay honest.
    """

    def __init__(self, path, task_ids=()):
        self.path = str(path)
        self.columns = (BASE_COLUMNS
                        + [f"return/{t}" for t in task_ids]
                        + [f"eval_return/{t}" for t in task_ids])
        self._last_step = None
        exists = os.path.exists(self.path) and os.path.getsize(self.path) > 0
        mode = "a" if exists else "w"
        self._fh = open(self.path, mode, newline="")
        self._writer = csv.DictWriter(self._fh, fieldnames=self.columns)
        if not exists:
            self._writer.writeheader()
            self._fh.flush()

    def write(self, row):
        unknown = set(row) - set(self.columns)
        if unknown:
            raise UsageError(f"unknown metrics columns {sorted(unknown)}")
        if "step" not in row:
            raise UsageError("metrics rows need a step")
        step = int(row["step"])
        if self._last_step is not None and step <= self._last_step:
            raise UsageError(
                f"metrics steps must strictly increase ({step} after "
                f"{self._last_step})")
        self._last_step = step
        clean = {k: ("" if v is None else v) for k, v in row.items()}
        self._writer.writerow(clean)
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    """Rows as dicts of floats (empty cells become None)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for k, v in row.items():
                parsed[k] = None if v in ("", None) else float(v)
            out.append(parsed)
    return out


def write_manifest(path, cfg_dict, task_ids, extra=None):
    doc = {"config": cfg_dict, "tasks": list(task_ids)}
    doc.update(extra or {})
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
