"""Toy continuous-control suite with explicit, documented dynamics.

Catalog:
  pointmass-dense   2-D double integrator; reward is negative distance to a
                    fixed goal at (0.5, 0.5); 200-step episodes
  pointmass-sparse  same plant; reward 1 only inside a 0.1-radius goal ball,
                    and reaching it ends the episode
  pendulum          torque-limited pendulum swing-up; theta = 0 hangs down,
                    upright is theta = pi
  multidim-k        k-dimensional double integrators (k in 1..3) mirroring
                    pointmass-dense; they exist to exercise padding, masks,
                    and task embeddings

All integrators are semi-implicit Euler: velocity first, then position
using the new velocity. Env objects are stateless calculators; VecEnv owns
per-slot state, rng streams, step counters, and auto-reset bookkeeping.
"""

from __future__ import annotations

import math

import numpy as np

from planrl.errors import ConfigError, UsageError
from planrl.multitask import TaskSpec, pad_observation, unpad_action

EPISODE_LIMIT = 200
DT = 0.05


class DoubleIntegrator:
    """p'' = a in k dimensions, unit mass; obs = (p, v, goal - p)."""

    def __init__(self, task_id, k, sparse=False, goal_radius=0.1):
        self.task_id = task_id
        self.k = int(k)
        self.sparse = sparse
        self.goal_radius = float(goal_radius)
        self.goal = np.full(self.k, 0.5)
        self.obs_dim = 3 * self.k
        self.act_dim = self.k
        self.action_low = tuple([-1.0] * self.k)
        self.action_high = tuple([1.0] * self.k)
        self.reward_range = (0.0, 1.0) if sparse else (-np.inf, 0.0)

    def init_state(self, rng):
        p = rng.uniform(-1.0, 1.0, size=self.k)
        v = np.zeros(self.k)
        return np.concatenate([p, v])

    def observe(self, state):
        p, v = state[:self.k], state[self.k:]
        return np.concatenate([p, v, self.goal - p])

    def step_state(self, state, action):
        a = np.asarray(action, dtype=np.float64)
        p, v = state[:self.k].copy(), state[self.k:].copy()
        v = v + a * DT
        p = p + v * DT
        dist = float(np.linalg.norm(p - self.goal))
        if self.sparse:
            hit = dist < self.goal_radius
            reward = 1.0 if hit else 0.0
            terminal = hit
        else:
            reward = -dist
            terminal = False
        return np.concatenate([p, v]), reward, terminal


class TorquePendulum:
    """theta'' = -(g/l) sin(theta) + u/(m l^2); g=10, l=1, m=1, u in [-2, 2].

    theta is measured from the hanging position, so the swing-up target is
    theta = pi. Angular velocity is clamped to [-8, 8]. The cost penalizes
    squared angle-to-upright, 0.1 * thetadot^2, and 0.001 * u^2.
    """

    GRAVITY = 10.0

    def __init__(self, task_id="pendulum"):
        self.task_id = task_id
        self.obs_dim = 3
        self.act_dim = 1
        self.action_low = (-2.0,)
        self.action_high = (2.0,)
        self.reward_range = (-(math.pi ** 2 + 0.1 * 64.0 + 0.001 * 4.0), 0.0)

    def init_state(self, rng):
        theta = rng.uniform(-math.pi, math.pi)
        return np.array([theta, 0.0])

    def observe(self, state):
        theta, theta_dot = state
        return np.array([math.cos(theta), math.sin(theta), theta_dot])

    def step_state(self, state, action):
        u = float(np.asarray(action).reshape(()))
        theta, theta_dot = state
        theta_ddot = -self.GRAVITY * math.sin(theta) + u
        theta_dot = theta_dot + theta_ddot * DT
        theta_dot = min(max(theta_dot, -8.0), 8.0)
        theta = theta + theta_dot * DT
        upright_err = _wrap_angle(theta - math.pi)
        reward = -(upright_err ** 2 + 0.1 * theta_dot ** 2 + 0.001 * u ** 2)
        return np.array([theta, theta_dot]), reward, False

    def mechanical_energy(self, state):
        theta, theta_dot = state
        return 0.5 * theta_dot ** 2 - self.GRAVITY * math.cos(theta)


def _wrap_angle(x):
    return (x + math.pi) % (2.0 * math.pi) - math.pi


def _build_catalog():
    cat = {
        "pointmass-dense": lambda: DoubleIntegrator("pointmass-dense", 2),
        "pointmass-sparse": lambda: DoubleIntegrator("pointmass-sparse", 2, sparse=True),
        "pendulum": lambda: TorquePendulum(),
    }
    for k in (1, 2, 3):
        cat[f"multidim-{k}"] = (lambda kk: (lambda: DoubleIntegrator(f"multidim-{kk}", kk)))(k)
    return cat


CATALOG = _build_catalog()


def make_env(name):
    if name not in CATALOG:
        raise ConfigError(f"unknown environment {name!r}; known: {sorted(CATALOG)}")
    return CATALOG[name]()


def task_set(names):
    """Instantiate envs and TaskSpecs; embed indices follow listing order."""
    envs, tasks = [], []
    for i, name in enumerate(names):
        env = make_env(name)
        envs.append(env)
        tasks.append(TaskSpec(task_id=env.task_id, obs_dim=env.obs_dim,
                              act_dim=env.act_dim, action_low=env.action_low,
                              action_high=env.action_high, embed_index=i))
    return envs, tasks


class VecEnv:
    """N environment slots stepped in lockstep with auto-reset.

    vec_step consumes universal-width actions and returns universal-width
    padded observations. Stepping slot i draws randomness only from slot
    i's own stream, so a vectorized step is bit-identical to stepping the
    slots one at a time in order.
    """

    def __init__(self, slot_envs, slot_tasks, spec):
        if len(slot_envs) != len(slot_tasks) or not slot_envs:
            raise ConfigError("need one env and task per slot")
        self.envs = list(slot_envs)
        self.tasks = list(slot_tasks)
        self.spec = spec
        self.n = len(self.envs)
        self.states = [None] * self.n
        self.steps = [0] * self.n
        self.ep_returns = [0.0] * self.n
        self.rngs = [None] * self.n

    def reset_all(self, seed):
        children = np.random.SeedSequence(seed).spawn(self.n)
        obs = np.zeros((self.n, self.spec.obs_dim))
        for i, ss in enumerate(children):
            self.rngs[i] = np.random.default_rng(ss)
            obs[i] = self._reset_slot(i)
        return obs

    def reset(self, slot, seed=None):
        if seed is not None:
            self.rngs[slot] = np.random.default_rng(seed)
        if self.rngs[slot] is None:
            raise UsageError("slot has no rng stream; call reset_all or pass a seed")
        return self._reset_slot(slot)

    def _reset_slot(self, slot):
        self.states[slot] = self.envs[slot].init_state(self.rngs[slot])
        self.steps[slot] = 0
        self.ep_returns[slot] = 0.0
        return pad_observation(self.envs[slot].observe(self.states[slot]),
                               self.tasks[slot], self.spec)

    def observe_all(self):
        """Padded observations of the current states, recomputed on demand."""
        obs = np.zeros((self.n, self.spec.obs_dim))
        for i in range(self.n):
            obs[i] = pad_observation(self.envs[i].observe(self.states[i]),
                                     self.tasks[i], self.spec)
        return obs

    def snapshot(self):
        """JSON-serializable full state: physics, counters, rng streams."""
        return [{"state": self.states[i].tolist(), "steps": self.steps[i],
                 "ep_return": self.ep_returns[i],
                 "rng": self.rngs[i].bit_generator.state}
                for i in range(self.n)]

    def load_snapshot(self, blob):
        if len(blob) != self.n:
            raise ConfigError(f"snapshot has {len(blob)} slots, env has {self.n}")
        for i, d in enumerate(blob):
            self.states[i] = np.asarray(d["state"], dtype=np.float64)
            self.steps[i] = int(d["steps"])
            self.ep_returns[i] = float(d["ep_return"])
            rng = np.random.default_rng(0)
            rng.bit_generator.state = d["rng"]
            self.rngs[i] = rng

    def step(self, slot, native_action):
        """Raw single-slot step: no auto-reset, native-width action."""
        a = np.asarray(native_action, dtype=np.float64)
        if not np.all(np.isfinite(a)):
            raise UsageError("non-finite action rejected")
        env = self.envs[slot]
        a = np.clip(a, np.asarray(env.action_low), np.asarray(env.action_high))
        state, reward, terminal = env.step_state(self.states[slot], a)
        self.states[slot] = state
        self.steps[slot] += 1
        self.ep_returns[slot] += reward
        done = terminal or self.steps[slot] >= EPISODE_LIMIT
        return env.observe(state), reward, done

    def vec_step(self, actions):
        """Step every slot with universal actions; auto-reset finished slots.

        Returns (obs, rewards, dones, terminal_obs, events): obs is the padded
        post-reset observation batch, terminal_obs the padded pre-reset next
        observation (equal to obs wherever done is False), and events a list
        of (slot, task_id, episode_return, episode_length) for episodes that
        ended on this step.
        """
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.n, self.spec.act_dim):
            raise UsageError(f"expected actions of shape {(self.n, self.spec.act_dim)}, "
                             f"got {actions.shape}")
        obs = np.zeros((self.n, self.spec.obs_dim))
        terminal_obs = np.zeros((self.n, self.spec.obs_dim))
        rewards = np.zeros(self.n)
        dones = np.zeros(self.n, dtype=bool)
        events = []
        for i in range(self.n):
            task = self.tasks[i]
            native = unpad_action(actions[i], task, self.spec)
            nobs, reward, done = self.step(i, native)
            rewards[i] = reward
            dones[i] = done
            terminal_obs[i] = pad_observation(nobs, task, self.spec)
            if done:
                events.append((i, task.task_id, self.ep_returns[i], self.steps[i]))
                obs[i] = self._reset_slot(i)
            else:
                obs[i] = terminal_obs[i]
        return obs, rewards, dones, terminal_obs, events


def random_policy_return(name, episodes, seed):
    """Monte Carlo mean return of uniform random actions; baseline oracle."""
    env = make_env(name)
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(env.action_low), np.asarray(env.action_high)
    totals = []
    for _ in range(episodes):
        state = env.init_state(rng)
        total = 0.0
        for _ in range(EPISODE_LIMIT):
            a = rng.uniform(lo, hi)
            state, r, terminal = env.step_state(state, a)
            total += r
            if terminal:
                break
        totals.append(total)
    return float(np.mean(totals))


def scripted_reference_return(name, episodes, seed, kp=4.0, kd=4.0):
    """Proportional feedback on (position error, velocity) for the double
    integrators; the comparison oracle for learning criteria. Rejects tasks
    it has no script for."""
    env = make_env(name)
    if not isinstance(env, DoubleIntegrator):
        raise UsageError(f"no scripted reference for {name!r}")
    rng = np.random.default_rng(seed)
    totals = []
    for _ in range(episodes):
        state = env.init_state(rng)
        total = 0.0
        for _ in range(EPISODE_LIMIT):
            p, v = state[:env.k], state[env.k:]
            a = np.clip(kp * (env.goal - p) - kd * v, -1.0, 1.0)
            state, r, terminal = env.step_state(state, a)
            total += r
            if terminal:
                break
        totals.append(total)
    return float(np.mean(totals))
