"""First-order optimizers with serializable state."""
from __future__ import annotations

import weakref

import numpy as np

from .memory import TRACKER


class Optimizer:
    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = float(lr)
        self.steps = 0
        self._acct = [0]
        weakref.finalize(self, TRACKER.release, self._acct)

    def _account(self, arrays):
        n = sum(a.nbytes for a in arrays)
        self._acct[0] += n
        TRACKER.alloc(n)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict:
        return {}

    def load_state_arrays(self, arrays: dict, steps: int) -> None:
        self.steps = int(steps)


class SGD(Optimizer):
    kind = "sgd"

    def step(self):
        self.steps += 1
        lr = self.lr
        for p in self.params:
            if p.grad is not None:
                p.data -= p.dtype.type(lr) * p.grad


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self._account(self.m + self.v)

    def step(self):
        self.steps += 1
        t = self.steps
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            dt = p.dtype.type
            m *= dt(b1)
            m += dt(1.0 - b1) * g
            v *= dt(b2)
            v += dt(1.0 - b2) * (g * g)
            p.data -= dt(self.lr / c1) * m / (np.sqrt(v / dt(c2)) + dt(self.eps))

    def state_arrays(self):
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adam.m.{i}"] = m
            out[f"adam.v.{i}"] = v
        return out

    def load_state_arrays(self, arrays, steps):
        super().load_state_arrays(arrays, steps)
        for i in range(len(self.params)):
            self.m[i][...] = arrays[f"adam.m.{i}"]
            self.v[i][...] = arrays[f"adam.v.{i}"]


def make_optimizer(kind, params, lr, **kw):
    if kind == "adam":
        return Adam(params, lr, **kw)
    if kind == "sgd":
        return SGD(params, lr)
    raise ValueError(f"unknown optimizer {kind!r}")
