"""Implicit world model learned for control, not reconstruction.

Five heads share a task embedding table:

    encoder   s, e      -> z        (tanh output; latents live in (-1, 1))
    dynamics  z, a, e   -> z'       (tanh output, same box)
    reward    z, a, e   -> r_hat
    critic    z, e      -> V(z)     (no action input by construction)
    prior     z, e      -> action mean and log-sigma per universal dim

The model is trained on prediction error alone: latent consistency against
a stop-gradient encoding of the next state, reward regression, and a value
term that shapes the encoder toward value-relevant features. Every head
has a taped path for training and an untaped numpy twin for planning and
rollout collection; the two are bit-identical given equal inputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from planrl.errors import UsageError
from planrl.multitask import build_universal
from planrl.nn import tensor as T
from planrl.nn.mlp import Mlp

_LOG_2PI_E = float(np.log(2.0 * np.pi * np.e))


@dataclass
class ModelConfig:
    latent_dim: int = 16
    hidden: tuple = (64, 64)
    embed_dim: int = 16
    sigma_min: float = 0.05
    sigma_max: float = 2.0
    sigma_init: float = 0.5


@dataclass
class PolicyDistribution:
    """Diagonal Gaussian over universal action dims; padded dims are pinned
    to mean 0 with sigma at the floor and excluded from densities."""

    mean: np.ndarray
    sigma: np.ndarray
    mask: np.ndarray
    low: np.ndarray
    high: np.ndarray

    def sample(self, rng):
        eps = rng.standard_normal(self.mean.shape)
        raw = self.mean + self.sigma * eps
        action = np.clip(raw, self.low, self.high) * self.mask
        return action, self.log_prob(action)

    def log_prob(self, action):
        """Gaussian log-density at the (already clamped) action, valid dims.

        The clamped value is what gets executed and stored, so the same
        formula at unchanged parameters reproduces the stored value bit for
        bit and the importance ratio starts at exactly 1.
        """
        return T.gaussian_log_prob_np(np.asarray(action), self.mean, self.sigma,
                                      self.mask)

    def entropy(self):
        per_dim = (np.log(self.sigma) + 0.5 * _LOG_2PI_E) * self.mask
        return np.sum(per_dim, axis=-1)


class WorldModel:
    """Parameter container plus forward paths; one instance per run."""

    def __init__(self, tasks, cfg: ModelConfig = None, seed=0):
        self.cfg = cfg or ModelConfig()
        self.tasks = list(tasks)
        self.universal = build_universal(self.tasks)
        O, A = self.universal.obs_dim, self.universal.act_dim
        L, E = self.cfg.latent_dim, self.cfg.embed_dim
        h = list(self.cfg.hidden)
        seeds = [int(s.generate_state(1)[0]) for s in
                 np.random.SeedSequence(seed).spawn(6)]
        self.encoder = Mlp([O + E] + h + [L], out_act="tanh", seed=seeds[0], name="encoder")
        self.dynamics = Mlp([L + A + E] + h + [L], out_act="tanh", seed=seeds[1],
                            name="dynamics")
        self.reward = Mlp([L + A + E] + h + [1], seed=seeds[2], name="reward")
        self.critic = Mlp([L + E] + h + [1], seed=seeds[3], name="critic")
        self.prior = Mlp([L + E] + h + [2 * A], seed=seeds[4], name="prior")
        # start the prior reasonably wide; raw log-sigma is clipped at use
        self.prior.biases[-1].data[A:] = np.log(self.cfg.sigma_init)
        table_rng = np.random.default_rng(seeds[5])
        bound = 1.0 / np.sqrt(E)
        self.embed_table = T.Tensor(table_rng.uniform(-bound, bound, size=(len(self.tasks), E)),
                                    requires_grad=True, name="embed/table")
        self.version = 0
        self.diagnostics = {"sigma_clamped": 0}
        self._by_id = {t.task_id: t for t in self.tasks}
        # per-embed-index mask and padded bound rows for fast batched lookup
        self._mask = np.stack([self.universal.act_mask[t.task_id].astype(np.float64)
                               for t in self.tasks])
        self._low = np.stack([self.universal.act_low[t.task_id] for t in self.tasks])
        self._high = np.stack([self.universal.act_high[t.task_id] for t in self.tasks])

    # ----- bookkeeping

    def task(self, task_id):
        if task_id not in self._by_id:
            raise UsageError(f"unknown task {task_id!r}")
        return self._by_id[task_id]

    def bump_version(self):
        self.version += 1

    def components(self):
        return [("encoder", self.encoder), ("dynamics", self.dynamics),
                ("reward", self.reward), ("critic", self.critic),
                ("prior", self.prior)]

    def named_parameters(self):
        out = []
        for _, net in self.components():
            out.extend(net.named_parameters())
        out.append((self.embed_table.name, self.embed_table))
        return out

    def params_model(self):
        """Prediction-error group: encoder, dynamics, reward, embeddings."""
        return (self.encoder.parameters() + self.dynamics.parameters() +
                self.reward.parameters() + [self.embed_table])

    def params_critic(self):
        return self.critic.parameters()

    def params_prior(self):
        return self.prior.parameters()

    def checksum(self):
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(p.data.tobytes())
        return h.hexdigest()

    # ----- shape plumbing

    def _rows(self, x, width, what):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != width:
            raise UsageError(f"{what}: expected width {width}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise UsageError(f"{what}: non-finite input rejected")
        return x, squeeze

    def _ids(self, task_ids, n):
        ids = np.asarray(task_ids, dtype=np.int64)
        if ids.ndim == 0:
            ids = np.full(n, int(ids))
        if ids.shape != (n,):
            raise UsageError("task index array must match the batch")
        return ids

    # ----- numpy inference paths

    def embed_np(self, ids):
        return self.embed_table.data[ids]

    def encode_np(self, obs, ids):
        return self.encoder.forward_np(np.concatenate([obs, self.embed_np(ids)], axis=1))

    def dynamics_np(self, z, a, ids):
        return self.dynamics.forward_np(np.concatenate([z, a, self.embed_np(ids)], axis=1))

    def reward_np(self, z, a, ids):
        return self.reward.forward_np(np.concatenate([z, a, self.embed_np(ids)],
                                                     axis=1))[:, 0]

    def value_np(self, z, ids):
        return self.critic.forward_np(np.concatenate([z, self.embed_np(ids)], axis=1))[:, 0]

    def prior_np(self, z, ids):
        """Masked mean and clamped sigma per row; counts clamp events."""
        A = self.universal.act_dim
        raw = self.prior.forward_np(np.concatenate([z, self.embed_np(ids)], axis=1))
        mask = self._mask[ids]
        mean = raw[:, :A] * mask
        log_std = raw[:, A:]
        lo, hi = np.log(self.cfg.sigma_min), np.log(self.cfg.sigma_max)
        self.diagnostics["sigma_clamped"] += int(np.count_nonzero(
            (log_std < lo) | (log_std > hi)))
        sigma = np.exp(np.clip(log_std, lo, hi))
        sigma = np.where(mask > 0.0, sigma, self.cfg.sigma_min)
        return mean, sigma

    # ----- validated single/batch ops

    def encode(self, obs, task_id):
        task = self.task(task_id)
        obs, squeeze = self._rows(obs, self.universal.obs_dim, "encode")
        z = self.encode_np(obs, self._ids(task.embed_index, obs.shape[0]))
        return z[0] if squeeze else z

    def predict_dynamics(self, z, action, task_id):
        task = self.task(task_id)
        z, squeeze = self._rows(z, self.cfg.latent_dim, "predict_dynamics")
        a, _ = self._rows(action, self.universal.act_dim, "predict_dynamics action")
        out = self.dynamics_np(z, a, self._ids(task.embed_index, z.shape[0]))
        return out[0] if squeeze else out

    def predict_reward(self, z, action, task_id):
        task = self.task(task_id)
        z, squeeze = self._rows(z, self.cfg.latent_dim, "predict_reward")
        a, _ = self._rows(action, self.universal.act_dim, "predict_reward action")
        out = self.reward_np(z, a, self._ids(task.embed_index, z.shape[0]))
        return float(out[0]) if squeeze else out

    def predict_value(self, z, task_id):
        task = self.task(task_id)
        z, squeeze = self._rows(z, self.cfg.latent_dim, "predict_value")
        out = self.value_np(z, self._ids(task.embed_index, z.shape[0]))
        return float(out[0]) if squeeze else out

    def prior_dist(self, z, task_id):
        task = self.task(task_id)
        z, squeeze = self._rows(z, self.cfg.latent_dim, "prior")
        ids = self._ids(task.embed_index, z.shape[0])
        mean, sigma = self.prior_np(z, ids)
        mask = self._mask[ids]
        low, high = self._low[ids], self._high[ids]
        if squeeze:
            return PolicyDistribution(mean[0], sigma[0], mask[0], low[0], high[0])
        return PolicyDistribution(mean, sigma, mask, low, high)

    def prior_sample(self, z, task_id, rng):
        return self.prior_dist(z, task_id).sample(rng)

    # ----- taped paths (training); inputs are ndarrays, outputs Tensors

    def _embed_t(self, ids, live=True):
        if live:
            return T.gather_rows(self.embed_table, ids)
        return T.constant(self.embed_table.data[ids])

    def encode_t(self, obs, ids, live_embed=True):
        e = self._embed_t(ids, live_embed)
        return self.encoder(T.concat([T.constant(obs), e], axis=1))

    def dynamics_t(self, z, actions, ids, live_embed=True):
        e = self._embed_t(ids, live_embed)
        return self.dynamics(T.concat([z, T.constant(actions), e], axis=1))

    def reward_t(self, z, actions, ids, live_embed=True):
        e = self._embed_t(ids, live_embed)
        return self.reward(T.concat([z, T.constant(actions), e], axis=1))

    def value_t(self, z, ids, live_embed=True):
        e = self._embed_t(ids, live_embed)
        return self.critic(T.concat([z, e], axis=1))

    def prior_t(self, z, ids, live_embed=True):
        """Returns (mean, sigma) tensors with the same masking and clamping
        as prior_np, expressed through taped ops."""
        A = self.universal.act_dim
        e = self._embed_t(ids, live_embed)
        raw = self.prior(T.concat([z, e], axis=1))
        mask = T.constant(self._mask[ids])
        mean = T.mul(T.slice_cols(raw, 0, A), mask)
        log_std = T.clip(T.slice_cols(raw, A, 2 * A),
                         np.log(self.cfg.sigma_min), np.log(self.cfg.sigma_max))
        sigma = T.exp(log_std)
        return mean, sigma, log_std, mask

    # ----- planning view

    def planning_view(self):
        return PlanningView(self)

    # ----- persistence

    def state_components(self):
        comps = []
        for name, net in self.components():
            comps.append({"name": name, "widths": list(net.widths),
                          "tensors": net.state_tensors()})
        comps.append({"name": "embed", "widths": list(self.embed_table.data.shape),
                      "tensors": [(self.embed_table.name, self.embed_table.data)]})
        return comps

    def load_state(self, tensors):
        for _, net in self.components():
            net.load_state_tensors(tensors)
        self.embed_table.data = tensors[self.embed_table.name].astype(np.float64)


class PlanningView:
    """Read-only batched access for the planner: plain numpy in and out,
    rows tagged with embed indices. Performs no parameter writes."""

    def __init__(self, model):
        self._m = model
        self.latent_dim = model.cfg.latent_dim
        self.act_dim = model.universal.act_dim

    def encode(self, obs, tids):
        return self._m.encode_np(obs, tids)

    def dynamics(self, z, a, tids):
        return self._m.dynamics_np(z, a, tids)

    def reward(self, z, a, tids):
        return self._m.reward_np(z, a, tids)

    def value(self, z, tids):
        return self._m.value_np(z, tids)

    def prior(self, z, tids):
        return self._m.prior_np(z, tids)

    def mask(self, tids):
        return self._m._mask[tids]

    def bounds(self, tids):
        return self._m._low[tids], self._m._high[tids]


@dataclass
class ModelLossReport:
    consistency: float
    reward: float
    value: float
    total: float
    skipped: bool = False


def model_update(model, optimizer, obs, actions, next_obs, rewards, returns,
                 task_ids, c1=1.0, c2=1.0, c3=0.5):
    """One gradient step on the combined prediction loss.

    The latent consistency target is the current encoder applied to the next
    state behind a stop-gradient, so the encoder trains only through the
    prediction path. The value term regresses the critic toward the provided
    return targets; its gradient is applied to the encoder and embeddings
    (the critic itself is owned by the policy-side optimizer). A non-finite
    loss skips the step and flags the report instead of raising.
    """
    ids = np.asarray(task_ids, dtype=np.int64)
    with T.Tape() as tape:
        z = model.encode_t(obs, ids)
        target = model.encode_t(next_obs, ids).detach()
        pred = model.dynamics_t(z, actions, ids)
        diff = T.sub(pred, target)
        consistency = T.tmean(T.tsum(T.mul(diff, diff), axis=1))
        r_pred = model.reward_t(z, actions, ids)
        r_err = T.sub(r_pred, T.constant(np.asarray(rewards).reshape(-1, 1)))
        reward_loss = T.tmean(T.mul(r_err, r_err))
        v_pred = model.value_t(z, ids)
        v_err = T.sub(v_pred, T.constant(np.asarray(returns).reshape(-1, 1)))
        value_loss = T.tmean(T.mul(v_err, v_err))
        loss = T.add(T.add(T.mul(consistency, T.constant(c1)),
                           T.mul(reward_loss, T.constant(c2))),
                     T.mul(value_loss, T.constant(c3)))
    report = ModelLossReport(consistency=float(consistency.data),
                             reward=float(reward_loss.data),
                             value=float(value_loss.data),
                             total=float(loss.data))
    if not np.isfinite(report.total):
        report.skipped = True
        return report
    grads = T.backward(tape, loss, optimizer.params)
    optimizer.step(grads)
    return report
