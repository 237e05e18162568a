"""Sampling-based planner over the learned latent model.

Candidate action sequences are scored by rolling the latent dynamics over a
short horizon, summing discounted predicted rewards, and closing the tail
with the critic at the final latent:

    J(a_0..a_{H-1}) = sum_k gamma^k r_hat(z_k, a_k) + gamma^H V(z_H)

Each refinement iteration samples around the current sequence mean, mixes in
a fraction of rollouts from the policy prior, and refits mean and spread on
a softmax-weighted elite set. Only the first action of the best sequence is
executed; the shifted mean warm-starts the next call.

Everything here reads model parameters and never writes them. Per-slot RNG
streams draw in a fixed order so a slot's plan is identical whether it is
planned alone or inside any batch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from planrl.errors import ConfigError


@dataclass
class PlannerConfig:
    horizon: int = 5
    num_samples: int = 512
    num_iterations: int = 6
    temperature: float = 0.5
    elite_fraction: float = 0.1
    prior_mix: float = 0.25
    init_std: float = 0.5
    noise_floor: float = 0.05
    discount: float = 0.99
    enabled: bool = True

    def __post_init__(self):
        if self.horizon < 1 or self.num_samples < 1 or self.num_iterations < 1:
            raise ConfigError("planner sizes must be positive")
        if self.temperature <= 0.0:
            raise ConfigError("temperature must be positive")
        if not 0.0 < self.elite_fraction <= 1.0:
            raise ConfigError("elite_fraction must be in (0, 1]")
        if not 0.0 <= self.prior_mix <= 1.0:
            raise ConfigError("prior_mix must be in [0, 1]")

    @property
    def num_elites(self):
        return max(1, int(self.elite_fraction * self.num_samples))

    @property
    def num_prior(self):
        return int(round(self.prior_mix * self.num_samples))


@dataclass
class PlanResult:
    action: np.ndarray          # first action of the best sequence, (A,)
    score: float                # best J seen across iterations
    mean: np.ndarray            # refined sequence mean, (H, A)
    std: np.ndarray             # refined sequence spread, (H, A)
    warm_mean: np.ndarray       # shifted mean for the next call, (H, A)
    degenerate: bool = False    # every candidate scored -inf


def evaluate_sequences(view, z0, seqs, tids, discount):
    """Score a batch of action sequences from matching start latents.

    z0 (M, L), seqs (M, H, A), tids (M,). Returns (scores (M,), z_H (M, L)).
    Rows with any non-finite intermediate score -inf rather than raising;
    the planner treats them as dead candidates.
    """
    m, horizon, _ = seqs.shape
    z = z0
    total = np.zeros(m)
    ok = np.ones(m, dtype=bool)
    gamma_k = 1.0
    # dead candidates are expected to overflow; they score -inf, not warn
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(horizon):
            a = seqs[:, k, :]
            r = view.reward(z, a, tids)
            z = view.dynamics(z, a, tids)
            total = total + gamma_k * r
            gamma_k *= discount
        total = total + gamma_k * view.value(z, tids)
    ok &= np.all(np.isfinite(seqs.reshape(m, -1)), axis=1)
    ok &= np.isfinite(total)
    return np.where(ok, total, -np.inf), z


def evaluate_sequence(view, z0, seq, tid, discount):
    scores, _ = evaluate_sequences(view, z0[None, :], seq[None, :, :],
                                   np.array([tid], dtype=np.int64), discount)
    return float(scores[0])


def _prior_rollout(view, z0, tids, eps_steps, lo, hi, mask):
    """Sample sequences from the policy prior, one latent step at a time.

    eps_steps is (H, M, A) of pre-drawn standard normals so the caller
    controls the draw order. Returns (M, H, A) clamped, masked actions.
    """
    m = z0.shape[0]
    horizon = len(eps_steps)
    out = np.empty((m, horizon, eps_steps[0].shape[1]))
    z = z0
    for k in range(horizon):
        mean, sigma = view.prior(z, tids)
        a = np.clip(mean + sigma * eps_steps[k], lo, hi) * mask
        out[:, k, :] = a
        z = view.dynamics(z, a, tids)
    return out


def plan_batch(view, z0, tids, rngs, cfg, warm_mean=None):
    """Plan for N slots at once; arithmetic per slot is batch-invariant.

    z0 (N, L), tids (N,) embed indices, rngs one Generator per slot. Net
    calls are batched across slots and samples, which is safe because every
    row is computed independently. Random draws happen per slot in a fixed
    order: the full noise block for an iteration, then one standard-normal
    block per prior rollout step.
    """
    n, latent = z0.shape
    act = view.act_dim
    h, ns = cfg.horizon, cfg.num_samples
    n_prior = cfg.num_prior
    n_elite = cfg.num_elites
    lo_slot, hi_slot = view.bounds(tids)
    mask_slot = view.mask(tids)

    mean = np.zeros((n, h, act)) if warm_mean is None else warm_mean.copy()
    mean = mean * mask_slot[:, None, :]
    std = np.full((n, h, act), cfg.init_std) * mask_slot[:, None, :]

    # flattened slot x sample layout; row r belongs to slot r // ns
    rep = np.repeat(np.arange(n), ns)
    tids_f = tids[rep]
    z0_f = z0[rep]
    lo_f = lo_slot[rep]
    hi_f = hi_slot[rep]
    mask_f = mask_slot[rep]

    best_score = np.full(n, -np.inf)
    best_seq = mean.copy()
    degenerate = np.zeros(n, dtype=bool)

    for _ in range(cfg.num_iterations):
        noise = np.empty((n, ns, h, act))
        prior_eps = np.empty((h, n, n_prior, act)) if n_prior else None
        for i, rng in enumerate(rngs):
            noise[i] = rng.standard_normal((ns, h, act))
            for k in range(h):
                if n_prior:
                    prior_eps[k, i] = rng.standard_normal((n_prior, act))
        cand = mean[:, None, :, :] + std[:, None, :, :] * noise
        if n_prior:
            zp = z0[np.repeat(np.arange(n), n_prior)]
            tp = tids[np.repeat(np.arange(n), n_prior)]
            eps_steps = [prior_eps[k].reshape(n * n_prior, act) for k in range(h)]
            rolled = _prior_rollout(view, zp, tp, eps_steps,
                                    lo_slot[np.repeat(np.arange(n), n_prior)],
                                    hi_slot[np.repeat(np.arange(n), n_prior)],
                                    mask_slot[np.repeat(np.arange(n), n_prior)])
            cand[:, :n_prior, :, :] = rolled.reshape(n, n_prior, h, act)
        cand = np.clip(cand, lo_slot[:, None, None, :], hi_slot[:, None, None, :])
        cand = cand * mask_slot[:, None, None, :]

        flat = cand.reshape(n * ns, h, act)
        scores, _ = evaluate_sequences(view, z0_f, flat, tids_f, cfg.discount)
        scores = scores.reshape(n, ns)

        for i in range(n):
            s_i = scores[i]
            top = int(np.argmax(s_i))
            if s_i[top] > best_score[i]:
                best_score[i] = s_i[top]
                best_seq[i] = cand[i, top]
            if not np.isfinite(s_i).any():
                degenerate[i] = True
                continue
            elite_idx = np.argpartition(s_i, ns - n_elite)[ns - n_elite:]
            elite_s = s_i[elite_idx]
            keep = np.isfinite(elite_s)
            elite_idx, elite_s = elite_idx[keep], elite_s[keep]
            w = np.exp((elite_s - elite_s.max()) / cfg.temperature)
            w = w / w.sum()
            elites = cand[i, elite_idx]
            mean[i] = np.einsum("e,eha->ha", w, elites)
            var = np.einsum("e,eha->ha", w, (elites - mean[i]) ** 2)
            std[i] = np.maximum(np.sqrt(var), cfg.noise_floor) * mask_slot[i]
            mean[i] = mean[i] * mask_slot[i]

    if degenerate.any():
        warnings.warn("planner scored every candidate -inf for at least one "
                      "slot; falling back to the prior mean", RuntimeWarning)
        for i in np.flatnonzero(degenerate):
            seq = np.empty((h, act))
            z = z0[i][None, :]
            tid_i = tids[i:i + 1]
            for k in range(h):
                pm, _ = view.prior(z, tid_i)
                a = np.clip(pm, lo_slot[i][None, :], hi_slot[i][None, :]) * mask_slot[i]
                seq[k] = a[0]
                z = view.dynamics(z, a, tid_i)
            best_seq[i] = seq
            mean[i] = seq
            if not np.isfinite(best_score[i]):
                best_score[i] = 0.0

    # warm start for the next call: shift left, fill the tail with the
    # prior mean at the end latent of the shifted sequence
    shifted = np.concatenate([best_seq[:, 1:, :], best_seq[:, -1:, :]], axis=1)
    _, z_end = evaluate_sequences(view, z0, shifted[:, :-1, :] if h > 1 else
                                  np.zeros((n, 0, act)), tids, cfg.discount)
    pm, _ = view.prior(z_end, tids)
    shifted[:, -1, :] = np.clip(pm, lo_slot, hi_slot) * mask_slot

    results = []
    for i in range(n):
        results.append(PlanResult(action=best_seq[i, 0].copy(),
                                  score=float(best_score[i]),
                                  mean=mean[i], std=std[i],
                                  warm_mean=shifted[i],
                                  degenerate=bool(degenerate[i])))
    return results


def plan(view, z0, tid, rng, cfg, warm_mean=None):
    """Single-slot convenience wrapper around plan_batch."""
    wm = None if warm_mean is None else warm_mean[None, :, :]
    return plan_batch(view, z0[None, :], np.array([tid], dtype=np.int64),
                      [rng], cfg, warm_mean=wm)[0]
