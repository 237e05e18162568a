"""Adam with bias correction, plus global-norm gradient clipping.

Parameters whose gradient is identically zero in a step are skipped
outright: moments do not decay and the per-parameter step count does not
advance. This keeps untouched parameters (absent tasks' embedding rows,
unreachable heads) bit-exactly fixed instead of letting stale momentum
drift them.
"""

from __future__ import annotations

import math

import numpy as np

from planrl.errors import NumericalError


class AdamState:
    """First/second moment estimates and per-parameter step counts."""

    def __init__(self, params):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = [0 for _ in params]


def global_grad_norm(grads):
    total = 0.0
    for g in grads:
        total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_grads(grads, max_norm):
    """Scale the gradient list in place so its global norm is <= max_norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update, in place. grads aligns with params by position.

    A NaN or inf gradient aborts the whole step before any parameter is
    touched; nothing is partially applied.
    """
    for p, g in zip(params, grads):
        if not np.all(np.isfinite(g)):
            name = p.name or "<unnamed>"
            raise NumericalError(f"non-finite gradient for {name}; update aborted")
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.any(g):
            continue
        state.t[i] += 1
        t = state.t[i]
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / (1.0 - beta1 ** t)
        v_hat = state.v[i] / (1.0 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


class Adam:
    """Convenience wrapper binding params, hyperparameters, and state."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, max_grad_norm=None):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.max_grad_norm = max_grad_norm
        self.state = AdamState(self.params)

    def step(self, grad_map):
        """grad_map: dict keyed by parameter identity, as backward() returns."""
        grads = [grad_map[p] for p in self.params]
        if self.max_grad_norm is not None:
            grads = clip_grads(grads, self.max_grad_norm)
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

    # checkpoint plumbing
    def state_tensors(self, prefix):
        out = []
        for i, p in enumerate(self.params):
            base = p.name or f"p{i}"
            out.append((f"{prefix}/m/{base}", self.state.m[i]))
            out.append((f"{prefix}/v/{base}", self.state.v[i]))
        out.append((f"{prefix}/t", np.asarray(self.state.t, dtype=np.float64)))
        return out

    def load_state_tensors(self, prefix, arrays):
        for i, p in enumerate(self.params):
            base = p.name or f"p{i}"
            self.state.m[i] = arrays[f"{prefix}/m/{base}"].copy()
            self.state.v[i] = arrays[f"{prefix}/v/{base}"].copy()
        self.state.t = [int(x) for x in arrays[f"{prefix}/t"]]

    def snapshot(self):
        return ([m.copy() for m in self.state.m],
                [v.copy() for v in self.state.v],
                list(self.state.t))

    def restore(self, snap):
        m, v, t = snap
        self.state.m = [a.copy() for a in m]
        self.state.v = [a.copy() for a in v]
        self.state.t = list(t)
