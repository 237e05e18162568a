"""Central finite-difference verification of the backward pass.

The comparator treats the analytic gradient and the numeric one
symmetrically: rel_err = |a - f| / max(|a|, |f|, scale_floor). The floor
keeps roundoff noise on near-zero entries from registering as failure
while leaving real rule bugs (which show up on O(1) entries) detectable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from planrl.nn import tensor as T
from planrl.nn.mlp import Mlp

DEFAULT_STEP = 1e-5
SCALE_FLOOR = 1e-3


@dataclass
class GradCheckReport:
    tolerance: float
    step: float
    max_rel_error: float = 0.0
    per_param: dict = field(default_factory=dict)
    passed: bool = True

    def worst(self):
        if not self.per_param:
            return None
        return max(self.per_param, key=self.per_param.get)


def analytic_gradients(loss_fn, params):
    with T.Tape() as tape:
        loss = loss_fn()
    grads = T.backward(tape, loss, params)
    return float(loss.data), grads


def numeric_gradient(loss_fn, param, step):
    """Central differences, one parameter entry at a time."""
    base = param.data.copy()
    flat = base.ravel()
    out = np.zeros_like(flat)
    for j in range(flat.size):
        saved = flat[j]
        flat[j] = saved + step
        param.data = flat.reshape(base.shape)
        f_plus = float(loss_fn().data)
        flat[j] = saved - step
        param.data = flat.reshape(base.shape)
        f_minus = float(loss_fn().data)
        flat[j] = saved
        out[j] = (f_plus - f_minus) / (2.0 * step)
    param.data = base
    return out.reshape(base.shape)


def compare(loss_fn, params, tolerance=1e-4, step=DEFAULT_STEP):
    """Check every parameter of a scalar-valued function against FD."""
    _, grads = analytic_gradients(loss_fn, params)
    report = GradCheckReport(tolerance=tolerance, step=step)
    for p in params:
        a = grads[p]
        f = numeric_gradient(loss_fn, p, step)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), SCALE_FLOOR)
        rel = float(np.max(np.abs(a - f) / denom)) if a.size else 0.0
        name = p.name or f"param{id(p)}"
        report.per_param[name] = rel
        report.max_rel_error = max(report.max_rel_error, rel)
    report.passed = report.max_rel_error < tolerance
    return report


def fd_gradient_check(net, x, tolerance=1e-4, step=DEFAULT_STEP):
    """Check an Mlp's backward pass through a sum-of-squares loss."""
    x_const = T.constant(np.asarray(x, dtype=np.float64))

    def loss_fn():
        out = net(x_const)
        return T.tsum(T.mul(out, out))

    return compare(loss_fn, net.parameters(), tolerance=tolerance, step=step)


# ---------------------------------------------------------------------------
# named suite covering every shipped layer and loss kind


def _case_linear(rng):
    net = Mlp([3, 2], seed=int(rng.integers(2**31)), name="lin")
    x = T.constant(rng.normal(size=(4, 3)))

    def loss_fn():
        out = net(x)
        return T.tsum(T.mul(out, out))

    return loss_fn, net.parameters()


def _case_mlp_tanh(rng):
    net = Mlp([3, 6, 5, 2], seed=int(rng.integers(2**31)), name="mlp")
    x = T.constant(rng.normal(size=(4, 3)))

    def loss_fn():
        out = net(x)
        return T.tsum(T.mul(out, out))

    return loss_fn, net.parameters()


def _case_tanh_out(rng):
    net = Mlp([3, 5, 2], out_act="tanh", seed=int(rng.integers(2**31)), name="enc")
    x = T.constant(rng.normal(size=(4, 3)))

    def loss_fn():
        out = net(x)
        return T.tsum(T.mul(out, out))

    return loss_fn, net.parameters()


def _case_mse(rng):
    net = Mlp([3, 6, 1], seed=int(rng.integers(2**31)), name="reg")
    x = T.constant(rng.normal(size=(5, 3)))
    y = T.constant(rng.normal(size=(5, 1)))

    def loss_fn():
        d = T.sub(net(x), y)
        return T.tmean(T.mul(d, d))

    return loss_fn, net.parameters()


def _case_gaussian_logprob(rng):
    # prior-style head: first half means, second half log-sigmas
    adim = 2
    net = Mlp([3, 8, 2 * adim], seed=int(rng.integers(2**31)), name="prior")
    x = T.constant(rng.normal(size=(4, 3)))
    acts = T.constant(rng.uniform(-0.8, 0.8, size=(4, adim)))
    mask = T.constant(np.ones((4, adim)))

    def loss_fn():
        raw = net(x)
        mean = T.slice_cols(raw, 0, adim)
        log_std = T.clip(T.slice_cols(raw, adim, 2 * adim), -3.0, 1.0)
        sigma = T.exp(log_std)
        lp = T.gaussian_log_prob_t(acts, mean, sigma, mask)
        return T.tmean(lp)

    return loss_fn, net.parameters()


def _case_entropy(rng):
    adim = 2
    net = Mlp([3, 8, 2 * adim], seed=int(rng.integers(2**31)), name="prior")
    x = T.constant(rng.normal(size=(4, 3)))
    mask = T.constant(np.ones((4, adim)))

    def loss_fn():
        raw = net(x)
        log_std = T.clip(T.slice_cols(raw, adim, 2 * adim), -3.0, 1.0)
        per_dim = T.add(log_std, T.constant(0.5 * np.log(2.0 * np.pi * np.e)))
        return T.tmean(T.tsum(T.mul(per_dim, mask), axis=1))

    return loss_fn, net.parameters()


def _case_ppo_surrogate(rng):
    adim = 2
    net = Mlp([3, 8, 2 * adim], seed=int(rng.integers(2**31)), name="prior")
    x = T.constant(rng.normal(size=(6, 3)))
    acts = T.constant(rng.uniform(-0.8, 0.8, size=(6, adim)))
    mask = T.constant(np.ones((6, adim)))
    adv = T.constant(rng.normal(size=6))
    clip_eps = 0.2

    def logp():
        raw = net(x)
        mean = T.slice_cols(raw, 0, adim)
        log_std = T.clip(T.slice_cols(raw, adim, 2 * adim), -3.0, 1.0)
        return T.gaussian_log_prob_t(acts, mean, T.exp(log_std), mask)

    # freeze an "old" log-prob, then nudge the net so ratios move off 1
    old = T.constant(logp().data.copy())
    for p in net.parameters():
        p.data = p.data + 0.05 * np.asarray(
            np.random.default_rng(int(rng.integers(2**31))).normal(size=p.data.shape))

    def loss_fn():
        rho = T.exp(T.sub(logp(), old))
        t1 = T.mul(rho, adv)
        t2 = T.mul(T.clip(rho, 1.0 - clip_eps, 1.0 + clip_eps), adv)
        return T.tmean(T.minimum(t1, t2))

    # FD straddles the clip kink if a ratio sits on a boundary; nudge away
    rho0 = np.exp(logp().data - old.data)
    for edge in (1.0 - clip_eps, 1.0 + clip_eps):
        if np.any(np.abs(rho0 - edge) < 1e-3):
            return _case_ppo_surrogate(rng)
    return loss_fn, net.parameters()


def _case_consistency_stopgrad(rng):
    # the detached target branch lives on a net we do not perturb: finite
    # differences cannot see through a stop-gradient, by definition
    enc = Mlp([4, 6, 3], out_act="tanh", seed=int(rng.integers(2**31)), name="enc")
    enc_tgt = Mlp([4, 6, 3], out_act="tanh", seed=int(rng.integers(2**31)), name="enc_tgt")
    dyn = Mlp([5, 6, 3], out_act="tanh", seed=int(rng.integers(2**31)), name="dyn")
    s = T.constant(rng.normal(size=(4, 4)))
    s_next = T.constant(rng.normal(size=(4, 4)))
    a = T.constant(rng.uniform(-1, 1, size=(4, 2)))

    def loss_fn():
        z = enc(s)
        target = enc_tgt(s_next).detach()
        pred = dyn(T.concat([z, a], axis=1))
        d = T.sub(pred, target)
        return T.tmean(T.tsum(T.mul(d, d), axis=1))

    return loss_fn, enc.parameters() + dyn.parameters()


def _case_embedding(rng):
    table = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="embed")
    net = Mlp([6, 5, 1], seed=int(rng.integers(2**31)), name="head")
    obs = T.constant(rng.normal(size=(5, 2)))
    ids = np.array([0, 1, 1, 2, 0])

    def loss_fn():
        e = T.gather_rows(table, ids)
        out = net(T.concat([obs, e], axis=1))
        return T.tsum(T.mul(out, out))

    return loss_fn, [table] + net.parameters()


CASES = {
    "linear": _case_linear,
    "mlp_tanh": _case_mlp_tanh,
    "tanh_output": _case_tanh_out,
    "mse": _case_mse,
    "gaussian_logprob": _case_gaussian_logprob,
    "entropy": _case_entropy,
    "ppo_surrogate": _case_ppo_surrogate,
    "consistency_stopgrad": _case_consistency_stopgrad,
    "embedding": _case_embedding,
}


@dataclass
class SuiteReport:
    seeds: int
    tolerance: float
    elapsed: float
    worst_by_case: dict
    passed: bool

    def lines(self):
        out = []
        for name, worst in self.worst_by_case.items():
            flag = "ok" if worst < self.tolerance else "FAIL"
            out.append(f"{name:24s} max_rel_err={worst:.3e}  {flag}")
        out.append(f"suite: {'pass' if self.passed else 'FAIL'} "
                   f"({self.seeds} seeds, {self.elapsed:.1f}s)")
        return out


def run_suite(seeds=100, tolerance=1e-4, step=DEFAULT_STEP):
    """Run every case across `seeds` random draws; used by `check --gradients`."""
    t0 = time.perf_counter()
    worst = {name: 0.0 for name in CASES}
    for s in range(seeds):
        for ci, (name, build) in enumerate(CASES.items()):
            rng = np.random.default_rng(10_000 * s + 101 * ci)
            loss_fn, params = build(rng)
            rep = compare(loss_fn, params, tolerance=tolerance, step=step)
            worst[name] = max(worst[name], rep.max_rel_error)
    elapsed = time.perf_counter() - t0
    passed = all(v < tolerance for v in worst.values())
    return SuiteReport(seeds=seeds, tolerance=tolerance, elapsed=elapsed,
                       worst_by_case=worst, passed=passed)
