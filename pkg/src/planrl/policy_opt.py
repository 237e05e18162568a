"""On-policy update: GAE, clipped surrogate, critic and model regression.

A rollout batch is stamped with the parameter version that produced it and
can be consumed exactly once; the update refuses anything stale. Within one
update the actor and critic take clipped-surrogate and value steps over
shuffled minibatches for several epochs, and the world model takes its
prediction step at the end of each epoch. Any non-finite loss rolls every
parameter and optimizer back to the pre-update snapshot and raises, so a
failed update can never leave the run half-stepped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from planrl.errors import NumericalError, UsageError
from planrl.exploration import augment
from planrl.nn import tensor as T
from planrl.nn.optim import Adam
from planrl.world_model import ModelLossReport, model_update

_LOG_2PI_E = float(np.log(2.0 * np.pi * np.e))
_NORM_FLOOR = 1e-8


@dataclass
class UpdateConfig:
    clip: float = 0.2
    epochs: int = 4
    minibatches: int = 8
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coef: float = 1e-3
    adv_norm: bool = True
    lr_actor: float = 3e-4
    lr_critic: float = 1e-3
    lr_model: float = 1e-3
    max_grad_norm: float = 0.5
    model_steps_per_epoch: int = 1
    ratio_log_limit: float = 20.0
    c_consistency: float = 1.0
    c_reward: float = 1.0
    c_value: float = 0.5


@dataclass
class Optimizers:
    actor: Adam
    critic: Adam
    model: Adam

    def all(self):
        return [self.actor, self.critic, self.model]


def make_optimizers(model, cfg: UpdateConfig):
    return Optimizers(
        actor=Adam(model.params_prior(), lr=cfg.lr_actor,
                   max_grad_norm=cfg.max_grad_norm),
        critic=Adam(model.params_critic(), lr=cfg.lr_critic,
                    max_grad_norm=cfg.max_grad_norm),
        model=Adam(model.params_model(), lr=cfg.lr_model,
                   max_grad_norm=cfg.max_grad_norm),
    )


@dataclass
class RolloutBatch:
    """Time-major on-policy buffer; task assignment is fixed per slot."""

    obs: np.ndarray        # (T, N, O)
    actions: np.ndarray    # (T, N, A)
    rewards: np.ndarray    # (T, N)
    dones: np.ndarray      # (T, N)
    next_obs: np.ndarray   # (T, N, O), terminal observation at resets
    logp_old: np.ndarray   # (T, N)
    values: np.ndarray     # (T + 1, N), last row bootstraps the tail
    eps: np.ndarray        # (T, N) exploration gaps
    task_ids: np.ndarray   # (N,) embed indices
    version: int
    consumed: bool = False

    @property
    def horizon(self):
        return self.obs.shape[0]

    @property
    def num_envs(self):
        return self.obs.shape[1]


def gae(rewards, values, dones, gamma, lam):
    """Generalized advantage estimates and value targets, time-major.

    Episode boundaries gate both the bootstrap and the recursion through
    (1 - done), so nothing leaks across a reset.
    """
    r = np.asarray(rewards, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    steps, n = r.shape
    if v.shape != (steps + 1, n):
        raise UsageError("values must have one more row than rewards")
    adv = np.zeros((steps, n))
    acc = np.zeros(n)
    for t in reversed(range(steps)):
        nonterminal = 1.0 - d[t]
        delta = r[t] + gamma * nonterminal * v[t + 1] - v[t]
        acc = delta + gamma * lam * nonterminal * acc
        adv[t] = acc
    return adv, adv + v[:-1]


def f_clip(ratio, adv, clip_eps):
    """Clipped-surrogate objective per element, plain numpy."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


@dataclass
class SurrogateStats:
    policy_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    num_included: int
    num_excluded: int
    max_abs_log_ratio: float


def surrogate_loss(model, z, actions, logp_old, adv, ids, cfg: UpdateConfig):
    """Build the taped actor loss on one minibatch.

    Gradients reach only the policy prior: the latents come in as plain
    arrays and the task embedding is read as a constant. Rows whose log
    ratio leaves [-limit, limit] are frozen out of the objective (the clip
    zeroes their gradient) and reported; exp stays finite either way.
    """
    ids = np.asarray(ids, dtype=np.int64)
    with T.Tape() as tape:
        mean, sigma, log_std, mask = model.prior_t(T.constant(z), ids,
                                                   live_embed=False)
        logp = T.gaussian_log_prob_t(T.constant(actions), mean, sigma, mask)
        log_ratio = T.sub(logp, T.constant(logp_old))
        limit = cfg.ratio_log_limit
        include = (np.abs(log_ratio.data) <= limit).astype(np.float64)
        n_inc = int(include.sum())
        ratio = T.exp(T.clip(log_ratio, -limit, limit))
        adv_c = T.constant(adv)
        unclipped = T.mul(ratio, adv_c)
        clipped = T.mul(T.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), adv_c)
        obj = T.minimum(unclipped, clipped)
        ent_rows = T.tsum(T.mul(T.add(log_std, T.constant(0.5 * _LOG_2PI_E)),
                                mask), axis=1)
        denom = max(n_inc, 1)
        pg = T.mul(T.tsum(T.mul(obj, T.constant(include))),
                   T.constant(-1.0 / denom))
        ent = T.mul(T.tsum(T.mul(ent_rows, T.constant(include))),
                    T.constant(1.0 / denom))
        loss = T.sub(pg, T.mul(ent, T.constant(cfg.entropy_coef)))
    r = ratio.data
    inc = include > 0.0
    clip_frac = float(np.mean(np.abs(r[inc] - 1.0) > cfg.clip)) if n_inc else 0.0
    kl = float(np.mean(r[inc] - 1.0 - log_ratio.data[inc])) if n_inc else 0.0
    stats = SurrogateStats(policy_loss=float(pg.data), entropy=float(ent.data),
                           clip_fraction=clip_frac, approx_kl=kl,
                           num_included=n_inc,
                           num_excluded=int(len(include) - n_inc),
                           max_abs_log_ratio=float(np.max(np.abs(log_ratio.data))))
    return tape, loss, stats


def critic_loss(model, z, returns, ids):
    """Taped value regression; only the critic head receives gradients."""
    ids = np.asarray(ids, dtype=np.int64)
    with T.Tape() as tape:
        v = model.value_t(T.constant(z), ids, live_embed=False)
        err = T.sub(v, T.constant(np.asarray(returns).reshape(-1, 1)))
        loss = T.tmean(T.mul(err, err))
    return tape, loss


@dataclass
class UpdateReport:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    num_excluded: int
    alpha: float
    adv_mean: float
    adv_std: float
    eps_mean: float
    model: ModelLossReport = field(default=None)


def _snapshot(model, opts):
    params = {p: p.data.copy() for _, p in model.named_parameters()}
    states = [o.snapshot() for o in opts.all()]
    return params, states


def _restore(model, opts, snap):
    params, states = snap
    for _, p in model.named_parameters():
        p.data = params[p].copy()
    for o, s in zip(opts.all(), states):
        o.restore(s)


def update(model, opts, batch: RolloutBatch, cfg: UpdateConfig, alpha, rng,
           standardize_bonus=True):
    """Consume one rollout batch: advantages, bonus, then epoch loop."""
    if batch.consumed:
        raise UsageError("rollout batch already consumed; collect a fresh one")
    if batch.version != model.version:
        raise UsageError(
            f"rollout version {batch.version} does not match parameters "
            f"{model.version}; on-policy data must come from the live model")
    batch.consumed = True

    adv, returns = gae(batch.rewards, batch.values, batch.dones,
                       cfg.gamma, cfg.gae_lambda)
    steps, n = adv.shape
    flat = steps * n
    rep = augment(adv.reshape(flat), batch.eps.reshape(flat), alpha,
                  standardize=standardize_bonus)
    adv_aug = rep.augmented
    adv_mean = float(adv_aug.mean())
    adv_std = float(adv_aug.std())
    if cfg.adv_norm:
        adv_aug = (adv_aug - adv_mean) / max(adv_std, _NORM_FLOOR)

    ids_flat = np.repeat(batch.task_ids[None, :], steps, axis=0).reshape(flat)
    obs_f = batch.obs.reshape(flat, -1)
    next_f = batch.next_obs.reshape(flat, -1)
    act_f = batch.actions.reshape(flat, -1)
    logp_f = batch.logp_old.reshape(flat)
    rew_f = batch.rewards.reshape(flat)
    ret_f = returns.reshape(flat)

    snap = _snapshot(model, opts)
    pstats, vlosses, mreport = [], [], None
    try:
        for _ in range(cfg.epochs):
            z_all = model.encode_np(obs_f, ids_flat)
            perm = rng.permutation(flat)
            for mb in np.array_split(perm, cfg.minibatches):
                tape, loss, st = surrogate_loss(
                    model, z_all[mb], act_f[mb], logp_f[mb], adv_aug[mb],
                    ids_flat[mb], cfg)
                if not np.isfinite(loss.data):
                    raise NumericalError("actor loss went non-finite")
                if st.num_included:
                    opts.actor.step(T.backward(tape, loss, opts.actor.params))
                pstats.append(st)
                vtape, vloss = critic_loss(model, z_all[mb], ret_f[mb],
                                           ids_flat[mb])
                if not np.isfinite(vloss.data):
                    raise NumericalError("critic loss went non-finite")
                opts.critic.step(T.backward(vtape, vloss, opts.critic.params))
                vlosses.append(float(vloss.data))
            for _ in range(cfg.model_steps_per_epoch):
                mb = rng.permutation(flat)[:max(flat // cfg.minibatches, 1)]
                mreport = model_update(
                    model, opts.model, obs_f[mb], act_f[mb], next_f[mb],
                    rew_f[mb], ret_f[mb], ids_flat[mb],
                    c1=cfg.c_consistency, c2=cfg.c_reward, c3=cfg.c_value)
                if mreport.skipped:
                    raise NumericalError("model loss went non-finite")
    except NumericalError:
        _restore(model, opts, snap)
        raise

    model.bump_version()
    return UpdateReport(
        policy_loss=float(np.mean([s.policy_loss for s in pstats])),
        value_loss=float(np.mean(vlosses)),
        entropy=float(np.mean([s.entropy for s in pstats])),
        clip_fraction=float(np.mean([s.clip_fraction for s in pstats])),
        approx_kl=float(np.mean([s.approx_kl for s in pstats])),
        num_excluded=int(sum(s.num_excluded for s in pstats)),
        alpha=float(alpha), adv_mean=adv_mean, adv_std=adv_std,
        eps_mean=float(batch.eps.mean()), model=mreport)
