"""Central-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, no_grad


def rel_error(a, n):
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom))


def _projection(fn, inputs, weights):
    out = fn(*inputs)
    return out, float(np.sum(out.data * weights))


def finite_diff_check(fn, inputs, eps=1e-5, directions=3, seed=0):
    """Largest relative error between analytic and numeric directional derivatives.

    ``fn`` maps the tensors in ``inputs`` to one output tensor. The output is
    reduced to a scalar with fixed random weights; for every input that
    requires a gradient, ``directions`` random unit directions are probed
    with central differences and compared against ``<grad, direction>``.
    """
    inputs = list(inputs)
    for t in inputs:
        if t.requires_grad and t.dtype != np.float64:
            raise TypeError("gradient checks need float64 tensors")
    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    weights = rng.standard_normal(out.shape)
    for t in inputs:
        t.grad = None
    loss = (out * weights).sum()
    backward(loss)
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic_grad = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        base = t.data.copy()
        for _ in range(directions):
            v = rng.standard_normal(base.shape)
            v /= np.linalg.norm(v) or 1.0
            with no_grad():
                t.data = base + eps * v
                plus = float(np.sum(fn(*inputs).data * weights))
                t.data = base - eps * v
                minus = float(np.sum(fn(*inputs).data * weights))
            t.data = base.copy()
            numeric = (plus - minus) / (2 * eps)
            worst = max(worst, rel_error(float(np.sum(analytic_grad * v)), numeric))
    return worst


def finite_diff_elements(loss_fn, tensor: Tensor, indices, eps=1e-6):
    """Relative errors of single-entry partial derivatives of a scalar loss.

    ``loss_fn()`` must rebuild the loss from current tensor values; the
    analytic gradient is read from ``tensor.grad`` (populated by the caller).
    """
    errors = []
    for idx in indices:
        old = tensor.data[idx]
        with no_grad():
            tensor.data[idx] = old + eps
            plus = float(loss_fn().data)
            tensor.data[idx] = old - eps
            minus = float(loss_fn().data)
        tensor.data[idx] = old
        numeric = (plus - minus) / (2 * eps)
        errors.append(rel_error(tensor.grad[idx], numeric))
    return errors
