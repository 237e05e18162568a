"""Disagreement bonus between model-based and model-free action values.

For a transition (s, a, r, s') the two one-step estimates

    Q_mf = r     + gamma * (1 - done) * V(z(s'))
    Q_mb = r_hat + gamma * (1 - done) * V(z_hat')

agree exactly when the model predicts reward and next latent perfectly, so
their absolute gap is a per-transition measure of model error. The gap is
centered (optionally standardized) over the batch, scaled by an annealed
weight, clipped elementwise so it can never flip an advantage's sign or more
than double its magnitude, and added to the advantages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from planrl.errors import ConfigError

STD_FLOOR = 1e-8


@dataclass
class BonusConfig:
    alpha0: float = 0.1
    anneal_fraction: float = 0.5
    standardize: bool = True

    def __post_init__(self):
        if self.alpha0 < 0.0:
            raise ConfigError("alpha0 must be nonnegative")
        if not 0.0 <= self.anneal_fraction <= 1.0:
            raise ConfigError("anneal_fraction must be in [0, 1]")


@dataclass
class AugmentReport:
    augmented: np.ndarray
    pre_clip: np.ndarray     # centered, scaled bonus before the clip
    clipped: np.ndarray      # what was actually added
    alpha: float
    eps_mean: float
    eps_std: float


def q_model_free(rewards, next_values, dones, gamma):
    dones = np.asarray(dones, dtype=np.float64)
    return np.asarray(rewards) + gamma * (1.0 - dones) * np.asarray(next_values)


def q_model_based(pred_rewards, pred_next_values, dones, gamma):
    dones = np.asarray(dones, dtype=np.float64)
    return (np.asarray(pred_rewards)
            + gamma * (1.0 - dones) * np.asarray(pred_next_values))


def bonus(q_mb, q_mf):
    return np.abs(np.asarray(q_mb) - np.asarray(q_mf))


def alpha_at(step, alpha0, anneal_fraction, total_steps):
    """Linear decay from alpha0 to exactly zero over the anneal window.

    Returns 0.0 (not a tiny float) for every step at or past the window end,
    so late training runs with the bonus provably off.
    """
    if total_steps <= 0:
        raise ConfigError("total_steps must be positive")
    window = anneal_fraction * total_steps
    if window <= 0.0:
        return 0.0
    frac = 1.0 - min(float(step), window) / window
    return alpha0 * frac


def augment(advantages, eps, alpha, standardize=True):
    """Add the clipped exploration bonus to a batch of advantages.

    The centered bonus has exact zero mean before clipping. The elementwise
    clip bounds the addition by each advantage's own magnitude, so the sign
    of every advantage survives and the magnitude at most doubles. A zero
    advantage stays exactly zero.
    """
    adv = np.asarray(advantages, dtype=np.float64)
    e = np.asarray(eps, dtype=np.float64)
    if adv.shape != e.shape:
        raise ConfigError("advantages and bonuses must have matching shapes")
    mean = float(e.mean())
    std = float(e.std())
    centered = e - mean
    if standardize:
        centered = centered / max(std, STD_FLOOR)
    pre_clip = alpha * centered
    lim = np.abs(adv)
    clipped = np.clip(pre_clip, -lim, lim)
    return AugmentReport(augmented=adv + clipped, pre_clip=pre_clip,
                         clipped=clipped, alpha=float(alpha),
                         eps_mean=mean, eps_std=std)
