"""Fully connected nets: tanh hidden layers, identity or tanh output."""

from __future__ import annotations

import math

import numpy as np

from planrl.errors import ConfigError, UsageError
from planrl.nn import tensor as T

_OUT_ACTS = ("identity", "tanh")


class Mlp:
    """Stack of affine layers with tanh between them.

    Weights are initialized uniformly at +-1/sqrt(fan_in) from a fixed
    per-component seed; biases start at zero. `forward_np` is the untaped
    twin of `__call__` and issues the same numpy calls in the same order,
    so the two paths agree bit for bit.
    """

    def __init__(self, widths, out_act="identity", seed=0, name="mlp"):
        if len(widths) < 2:
            raise ConfigError("Mlp needs at least input and output widths")
        if out_act not in _OUT_ACTS:
            raise ConfigError(f"unknown output activation {out_act!r}")
        self.widths = tuple(int(w) for w in widths)
        self.out_act = out_act
        self.name = name
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for i, (fin, fout) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            bound = 1.0 / math.sqrt(fin)
            w = T.Tensor(rng.uniform(-bound, bound, size=(fin, fout)),
                         requires_grad=True, name=f"{name}/w{i}")
            b = T.Tensor(np.zeros(fout), requires_grad=True, name=f"{name}/b{i}")
            self.weights.append(w)
            self.biases.append(b)

    @property
    def in_dim(self):
        return self.widths[0]

    @property
    def out_dim(self):
        return self.widths[-1]

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]

    def param_count(self):
        return sum(p.data.size for p in self.parameters())

    def _check_width(self, width):
        if width != self.in_dim:
            raise ConfigError(
                f"{self.name}: input width {width} does not match expected {self.in_dim}")

    def __call__(self, x):
        x = T.as_tensor(x)
        squeeze = x.data.ndim == 1
        if squeeze:
            if x.requires_grad:
                raise UsageError("1-D inputs are a constant-vector convenience; "
                                 "feed 2-D tensors when gradients must flow through x")
            x = T.constant(x.data[None, :])
        self._check_width(x.data.shape[1])
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = T.add(T.matmul(h, w), b)
            if i < last:
                h = T.tanh(h)
            elif self.out_act == "tanh":
                h = T.tanh(h)
        if squeeze:
            # tests feed single rows; keep this path taped by reusing slice machinery
            return T.tsum(h, axis=0)
        return h

    def forward_np(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        self._check_width(x.shape[1])
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = T.blocked_matmul(h, w.data) + b.data
            if i < last:
                h = np.tanh(h)
            elif self.out_act == "tanh":
                h = np.tanh(h)
        if squeeze:
            return h.sum(axis=0)
        return h

    def state_tensors(self):
        """(name, array) pairs in documented order: w0, b0, w1, b1, ..."""
        return [(p.name, p.data) for p in self.parameters()]

    def load_state_tensors(self, arrays):
        for p in self.parameters():
            a = arrays[p.name]
            if a.shape != p.data.shape:
                raise ConfigError(f"shape mismatch loading {p.name}")
            p.data = a.astype(np.float64)
