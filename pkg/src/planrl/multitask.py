"""Heterogeneous tasks behind one interface: prefix padding, boolean masks,
task embeddings, scheduling, and cross-task reward scaling.

Universal observation/action widths are the maxima over the registered
tasks. Native vectors occupy a prefix of the universal vector; the padded
suffix is zero on the way in and masked out of log-probabilities,
entropies, and planner sampling on the way out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from planrl.errors import ConfigError, UsageError
from planrl.nn import tensor as T


@dataclass(frozen=True)
class TaskSpec:
    """Static description of one task; embed_index keys the embedding table."""
    task_id: str
    obs_dim: int
    act_dim: int
    action_low: tuple
    action_high: tuple
    embed_index: int = 0

    def __post_init__(self):
        if self.obs_dim <= 0 or self.act_dim <= 0:
            raise ConfigError(f"{self.task_id}: dims must be positive")
        if len(self.action_low) != self.act_dim or len(self.action_high) != self.act_dim:
            raise ConfigError(f"{self.task_id}: bounds must match act_dim")
        if any(l >= h for l, h in zip(self.action_low, self.action_high)):
            raise ConfigError(f"{self.task_id}: each low bound must be < high bound")


@dataclass
class UniversalSpec:
    obs_dim: int
    act_dim: int
    tasks: list = field(default_factory=list)
    obs_mask: dict = field(default_factory=dict)   # task_id -> bool (obs_dim,)
    act_mask: dict = field(default_factory=dict)   # task_id -> bool (act_dim,)
    act_low: dict = field(default_factory=dict)    # padded, [-1, 1] on pad dims
    act_high: dict = field(default_factory=dict)

    def task(self, task_id):
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise UsageError(f"unknown task {task_id!r}")


def build_universal(tasks):
    """Compute universal dims, per-task masks, and padded action bounds."""
    tasks = list(tasks)
    if not tasks:
        raise ConfigError("at least one task is required")
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate task ids")
    obs_dim = max(t.obs_dim for t in tasks)
    act_dim = max(t.act_dim for t in tasks)
    spec = UniversalSpec(obs_dim=obs_dim, act_dim=act_dim, tasks=tasks)
    for t in tasks:
        om = np.zeros(obs_dim, dtype=bool)
        om[:t.obs_dim] = True
        am = np.zeros(act_dim, dtype=bool)
        am[:t.act_dim] = True
        lo = np.full(act_dim, -1.0)
        hi = np.full(act_dim, 1.0)
        lo[:t.act_dim] = t.action_low
        hi[:t.act_dim] = t.action_high
        spec.obs_mask[t.task_id] = om
        spec.act_mask[t.task_id] = am
        spec.act_low[t.task_id] = lo
        spec.act_high[t.task_id] = hi
    return spec


def pad_observation(obs, task, spec):
    """Zero-pad a native observation (or batch) to universal width."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != task.obs_dim:
        raise UsageError(f"{task.task_id}: expected native obs width {task.obs_dim}, "
                         f"got {obs.shape[-1]}")
    pad = spec.obs_dim - task.obs_dim
    if pad == 0:
        return obs.copy()
    pad_block = np.zeros(obs.shape[:-1] + (pad,))
    return np.concatenate([obs, pad_block], axis=-1)


def unpad_action(action, task, spec):
    """Extract the native prefix of a universal action and clamp to bounds."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape[-1] != spec.act_dim:
        raise UsageError(f"expected universal action width {spec.act_dim}, "
                         f"got {action.shape[-1]}")
    native = action[..., :task.act_dim]
    return np.clip(native, np.asarray(task.action_low), np.asarray(task.action_high))


def embed(table, index):
    """Differentiable row lookup; index may be an int or an int array."""
    idx = np.atleast_1d(np.asarray(index, dtype=np.int64))
    if np.any(idx < 0) or np.any(idx >= table.data.shape[0]):
        raise UsageError("embedding index out of range")
    return T.gather_rows(table, idx)


def schedule(step, num_envs, tasks):
    """Deterministic round-robin slot assignment, stable across a run.

    The step argument is accepted for interface stability; assignments do
    not change over time, so it is unused.
    """
    del step
    tasks = list(tasks)
    if num_envs <= 0:
        raise UsageError("num_envs must be positive")
    return [tasks[i % len(tasks)] for i in range(num_envs)]


class RewardScaler:
    """Per-task running estimate of |episode return|, used as a reward divisor
    so no single task dominates the shared advantage batch."""

    def __init__(self, task_ids, rate=0.05, floor=1.0):
        self.rate = float(rate)
        self.floor = float(floor)
        self._scale = {tid: None for tid in task_ids}

    def scale(self, task_id):
        s = self._scale[task_id]
        if s is None:
            return self.floor
        return max(s, self.floor)

    def update(self, task_id, episode_return):
        r = abs(float(episode_return))
        s = self._scale[task_id]
        self._scale[task_id] = r if s is None else (1.0 - self.rate) * s + self.rate * r

    def state(self):
        return {tid: (None if s is None else float(s)) for tid, s in self._scale.items()}

    def load_state(self, state):
        for tid, s in state.items():
            self._scale[tid] = s
