"""Exploration bonus: worked values, clip invariants, anneal schedule."""

import numpy as np
import pytest

from planrl.errors import ConfigError
from planrl.exploration import (BonusConfig, alpha_at, augment, bonus,
                                q_model_based, q_model_free)


def test_worked_example_cancels_to_zero():
    # gaps [1, 3] center to [-1, 1] (std 1, so standardizing changes
    # nothing); at weight 0.5 the additions clip to -/+ 0.4 and both
    # advantages land exactly on zero
    adv = np.array([0.4, -0.4])
    eps = np.array([1.0, 3.0])
    for standardize in (True, False):
        rep = augment(adv, eps, alpha=0.5, standardize=standardize)
        assert np.array_equal(rep.augmented, np.zeros(2))
        assert np.array_equal(rep.clipped, np.array([-0.4, 0.4]))


def test_pre_clip_bonus_has_zero_mean():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 400))
        adv = rng.standard_normal(n) * rng.uniform(0.1, 10)
        eps = np.abs(rng.standard_normal(n)) * rng.uniform(0.5, 50)
        for standardize in (True, False):
            rep = augment(adv, eps, alpha=0.3, standardize=standardize)
            assert abs(rep.pre_clip.mean()) < 1e-12


def test_sign_preserved_and_magnitude_at_most_doubled():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(2, 64))
        adv = rng.standard_normal(n)
        adv[rng.random(n) < 0.1] = 0.0
        eps = np.abs(rng.standard_normal(n)) * rng.uniform(0.01, 100)
        alpha = rng.uniform(0.0, 2.0)
        rep = augment(adv, eps, alpha=alpha,
                      standardize=bool(rng.integers(0, 2)))
        assert np.all(rep.augmented * np.sign(adv) >= 0.0)
        assert np.all(np.abs(rep.augmented) <= 2.0 * np.abs(adv) + 1e-15)


def test_zero_advantage_stays_exactly_zero():
    adv = np.array([0.0, 0.0, 1.0])
    eps = np.array([5.0, 1.0, 3.0])
    rep = augment(adv, eps, alpha=1.0)
    assert rep.augmented[0] == 0.0
    assert rep.augmented[1] == 0.0


def test_constant_gap_is_a_no_op_even_when_standardizing():
    adv = np.array([0.3, -0.7, 1.2])
    eps = np.full(3, 4.2)
    rep = augment(adv, eps, alpha=0.9, standardize=True)
    # centering kills a constant gap; the std floor keeps the division tame
    assert np.array_equal(rep.augmented, adv)
    assert np.all(rep.pre_clip == 0.0)


def test_perfect_model_means_zero_bonus():
    rng = np.random.default_rng(2)
    r = rng.standard_normal(32)
    v = rng.standard_normal(32)
    dones = rng.random(32) < 0.2
    q_mf = q_model_free(r, v, dones, gamma=0.99)
    q_mb = q_model_based(r, v, dones, gamma=0.99)
    assert np.array_equal(bonus(q_mb, q_mf), np.zeros(32))


def test_done_gating_drops_the_bootstrap():
    q = q_model_free(np.array([1.5]), np.array([100.0]), np.array([True]), 0.99)
    assert q[0] == 1.5
    q = q_model_based(np.array([1.5]), np.array([100.0]), np.array([False]), 0.5)
    assert q[0] == 1.5 + 0.5 * 100.0


def test_alpha_schedule_hits_exact_zero():
    a0, frac, total = 0.25, 0.5, 1000
    window = frac * total
    assert alpha_at(0, a0, frac, total) == a0
    assert alpha_at(window / 2, a0, frac, total) == a0 / 2
    assert alpha_at(window, a0, frac, total) == 0.0
    assert alpha_at(window + 1, a0, frac, total) == 0.0
    assert alpha_at(total * 10, a0, frac, total) == 0.0
    trace = [alpha_at(s, a0, frac, total) for s in range(0, total, 7)]
    assert all(b <= a for a, b in zip(trace, trace[1:]))


def test_alpha_schedule_edge_cases():
    assert alpha_at(0, 0.3, 0.0, 100) == 0.0
    assert alpha_at(50, 0.0, 0.5, 100) == 0.0
    with pytest.raises(ConfigError):
        alpha_at(0, 0.3, 0.5, 0)


def test_config_validation_and_shape_check():
    with pytest.raises(ConfigError):
        BonusConfig(alpha0=-0.1)
    with pytest.raises(ConfigError):
        BonusConfig(anneal_fraction=1.5)
    with pytest.raises(ConfigError):
        augment(np.zeros(3), np.zeros(4), alpha=0.1)
