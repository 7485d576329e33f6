"""Differentiable layer primitives over ``(N, C, *spatial)`` tensors.

Convolutions work for any number of spatial dims (2D and 3D are used). They
are computed as one matrix product per kernel offset, which keeps the
working set close to the size of the activations instead of materializing a
full im2col buffer.
"""
from __future__ import annotations

import itertools

import numpy as np

from ..errors import DegenerateBatch, NonIntegralOutput, ShapeMismatch, UsageError, WindowTooLarge
from .tensor import Tensor, as_tensor, make_output


def _tuple(v, d):
    if np.isscalar(v):
        return (int(v),) * d
    v = tuple(int(x) for x in v)
    if len(v) != d:
        raise ShapeMismatch(f"expected {d} values, got {v}")
    return v


def _offsets(kernel):
    return itertools.product(*(range(k) for k in kernel))


def _window(offset, stride, count):
    return tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, count))


def conv_output_size(size, kernel, stride, padding):
    span = size + 2 * padding - kernel
    if span < 0:
        raise ShapeMismatch(f"kernel {kernel} larger than padded extent {size + 2 * padding}")
    if span % stride:
        raise NonIntegralOutput(f"({size}+2*{padding}-{kernel})/{stride} is not integral")
    return span // stride + 1


def conv(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """N-d cross-correlation. ``weight`` has shape ``(Cout, Cin, *kernel)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    d = x.ndim - 2
    if d < 1 or weight.ndim != d + 2:
        raise ShapeMismatch(f"input {x.shape} and weight {weight.shape} ranks disagree")
    n, cin = x.shape[:2]
    cout, wcin = weight.shape[:2]
    if wcin != cin:
        raise ShapeMismatch(f"input has {cin} channels, weight expects {wcin}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeMismatch(f"bias shape {bias.shape} != ({cout},)")
    kernel = weight.shape[2:]
    stride, padding = _tuple(stride, d), _tuple(padding, d)
    if min(stride) < 1 or min(padding) < 0:
        raise UsageError("stride must be >= 1 and padding >= 0")
    out_sp = tuple(conv_output_size(s, k, st, p)
                   for s, k, st, p in zip(x.shape[2:], kernel, stride, padding))

    # channel-major copy of the padded input: (Cin, N, *spatial)
    xt = np.moveaxis(x.data, 1, 0)
    if any(padding):
        xt = np.pad(xt, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))
    xt = np.ascontiguousarray(xt)
    w = weight.data
    out = np.zeros((cout, n) + out_sp, dtype=x.dtype)
    for off in _offsets(kernel):
        win = (slice(None), slice(None)) + _window(off, stride, out_sp)
        out += np.tensordot(w[(slice(None), slice(None)) + off], xt[win], axes=([1], [0]))
    out = np.moveaxis(out, 0, 1)
    if bias is not None:
        out = out + bias.data.reshape((1, cout) + (1,) * d)
    else:
        out = np.ascontiguousarray(out)

    in_sp = x.shape[2:]
    red = (0,) + tuple(range(2, 2 + d))

    def backward(g):
        gt = np.ascontiguousarray(np.moveaxis(g, 1, 0))
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.zeros_like(w)
            sp_axes = list(range(1, 2 + d))
            for off in _offsets(kernel):
                win = (slice(None), slice(None)) + _window(off, stride, out_sp)
                gw[(slice(None), slice(None)) + off] = np.tensordot(gt, xt[win], axes=(sp_axes, sp_axes))
        if x.requires_grad:
            gxt = np.zeros_like(xt)
            for off in _offsets(kernel):
                win = (slice(None), slice(None)) + _window(off, stride, out_sp)
                gxt[win] += np.tensordot(w[(slice(None), slice(None)) + off], gt, axes=([0], [0]))
            crop = (slice(None), slice(None)) + tuple(slice(p, p + s) for p, s in zip(padding, in_sp))
            gx = np.ascontiguousarray(np.moveaxis(gxt[crop], 0, 1))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=red)
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_output(out, parents, backward, f"conv{d}d", saved=(xt,))


def conv2d(x, weight, bias=None, stride=1, padding=0):
    if as_tensor(x).ndim != 4:
        raise ShapeMismatch(f"conv2d expects (N, C, H, W), got {as_tensor(x).shape}")
    return conv(x, weight, bias, stride, padding)


def conv3d(x, weight, bias=None, stride=1, padding=0):
    if as_tensor(x).ndim != 5:
        raise ShapeMismatch(f"conv3d expects (N, C, D, H, W), got {as_tensor(x).shape}")
    return conv(x, weight, bias, stride, padding)


def deconv(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=2, padding=1,
           output_padding=1) -> Tensor:
    """N-d transposed convolution, the adjoint of :func:`conv`.

    ``weight`` has shape ``(Cin, Cout, *kernel)``. The defaults (with a 3-wide
    kernel) double every spatial extent.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    d = x.ndim - 2
    if d < 1 or weight.ndim != d + 2:
        raise ShapeMismatch(f"input {x.shape} and weight {weight.shape} ranks disagree")
    n, cin = x.shape[:2]
    if weight.shape[0] != cin:
        raise ShapeMismatch(f"input has {cin} channels, weight expects {weight.shape[0]}")
    cout = weight.shape[1]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeMismatch(f"bias shape {bias.shape} != ({cout},)")
    kernel = weight.shape[2:]
    stride, padding, outpad = _tuple(stride, d), _tuple(padding, d), _tuple(output_padding, d)
    in_sp = x.shape[2:]
    out_sp = tuple((s - 1) * st - 2 * p + k + op
                   for s, st, p, k, op in zip(in_sp, stride, padding, kernel, outpad))
    if min(out_sp) < 1:
        raise ShapeMismatch(f"transposed conv output {out_sp} is empty")
    full_sp = tuple(max((s - 1) * st + k, p + o)
                    for s, st, k, p, o in zip(in_sp, stride, kernel, padding, out_sp))
    crop = (slice(None), slice(None)) + tuple(slice(p, p + o) for p, o in zip(padding, out_sp))

    xt = np.ascontiguousarray(np.moveaxis(x.data, 1, 0))
    w = weight.data
    full = np.zeros((cout, n) + full_sp, dtype=x.dtype)
    for off in _offsets(kernel):
        win = (slice(None), slice(None)) + _window(off, stride, in_sp)
        full[win] += np.tensordot(w[(slice(None), slice(None)) + off], xt, axes=([0], [0]))
    out = np.moveaxis(full[crop], 0, 1)
    if bias is not None:
        out = out + bias.data.reshape((1, cout) + (1,) * d)
    else:
        out = np.ascontiguousarray(out)
    del full

    red = (0,) + tuple(range(2, 2 + d))

    def backward(g):
        gfull = np.zeros((cout, n) + full_sp, dtype=g.dtype)
        gfull[crop] = np.moveaxis(g, 1, 0)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.zeros_like(w)
            sp_axes = list(range(1, 2 + d))
            for off in _offsets(kernel):
                win = (slice(None), slice(None)) + _window(off, stride, in_sp)
                gw[(slice(None), slice(None)) + off] = np.tensordot(xt, gfull[win], axes=(sp_axes, sp_axes))
        if x.requires_grad:
            gxt = np.zeros_like(xt)
            for off in _offsets(kernel):
                win = (slice(None), slice(None)) + _window(off, stride, in_sp)
                gxt += np.tensordot(w[(slice(None), slice(None)) + off], gfull[win], axes=([1], [0]))
            gx = np.ascontiguousarray(np.moveaxis(gxt, 0, 1))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=red)
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_output(out, parents, backward, f"deconv{d}d", saved=(xt,))


def deconv2d(x, weight, bias=None, stride=2):
    return deconv(x, weight, bias, stride=stride, padding=1, output_padding=1)


def deconv3d(x, weight, bias=None, stride=2):
    return deconv(x, weight, bias, stride=stride, padding=1, output_padding=1)


def maxpool(x: Tensor, window=2, stride=2) -> Tensor:
    """Windowed maximum with floor semantics.

    The backward pass sends each window's gradient to its first maximal
    element in scan order.
    """
    x = as_tensor(x)
    d = x.ndim - 2
    window, stride = _tuple(window, d), _tuple(stride, d)
    if min(window) < 1 or min(stride) < 1:
        raise UsageError("window and stride must be >= 1")
    in_sp = x.shape[2:]
    if any(k > s for k, s in zip(window, in_sp)):
        raise WindowTooLarge(f"window {window} exceeds spatial extent {in_sp}")
    out_sp = tuple((s - k) // st + 1 for s, k, st in zip(in_sp, window, stride))
    lead = (slice(None), slice(None))
    offsets = list(_offsets(window))
    best = x.data[lead + _window(offsets[0], stride, out_sp)].copy()
    arg = np.zeros(best.shape, dtype=np.uint8 if len(offsets) < 256 else np.int32)
    for j, off in enumerate(offsets[1:], start=1):
        v = x.data[lead + _window(off, stride, out_sp)]
        take = v > best
        best[take] = v[take]
        arg[take] = j
    shape, dtype = x.shape, x.dtype

    def backward(g):
        gx = np.zeros(shape, dtype=dtype)
        for j, off in enumerate(offsets):
            gx[lead + _window(off, stride, out_sp)] += np.where(arg == j, g, 0)
        return (gx,)

    return make_output(best, (x,), backward, f"maxpool{d}d", saved=(arg,))


def maxpool2d(x, window=2, stride=2):
    return maxpool(x, window, stride)


def maxpool3d(x, window=2, stride=2):
    return maxpool(x, window, stride)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Channels of ``a`` followed by channels of ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim or a.shape[:1] != b.shape[:1] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"cannot concatenate {a.shape} and {b.shape} on channels")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data.astype(a.dtype, copy=False)], axis=1)
    return make_output(out, (a, b), lambda g: (g[:, :ca].copy(), g[:, ca:].copy()), "concat")


def leaky_relu(x: Tensor, slope=0.01) -> Tensor:
    x = as_tensor(x)
    if not 0 <= slope < 1:
        raise UsageError(f"negative slope must be in [0, 1), got {slope}")
    xd = x.data
    pos = xd >= 0
    out = np.where(pos, xd, xd * x.dtype.type(slope))
    return make_output(out, (x,), lambda g: (np.where(pos, g, g * g.dtype.type(slope)),),
                       "leaky_relu", saved=(pos,))


def relu(x):
    return leaky_relu(x, 0.0)


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 1, shifted by the per-pixel maximum."""
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[1] < 1:
        raise ShapeMismatch(f"softmax needs a channel axis, got {x.shape}")
    z = np.exp(x.data - x.data.max(axis=1, keepdims=True))
    y = z / z.sum(axis=1, keepdims=True)
    del z

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return make_output(y, (x,), backward, "softmax")


class BatchNormState:
    """Running statistics for one batchnorm layer (updated in place)."""

    def __init__(self, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
              train: bool = True) -> Tensor:
    """Per-channel normalization over batch and spatial axes.

    Train mode uses batch statistics and folds them into the running
    estimates; eval mode uses the running estimates only.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"gamma/beta must have shape ({c},)")
    d = x.ndim - 2
    axes = (0,) + tuple(range(2, 2 + d))
    bshape = (1, c) + (1,) * d
    m = x.data.size // c
    dt = x.dtype.type
    eps = dt(state.eps)
    if train:
        if m < 2:
            raise DegenerateBatch(f"batch statistics over {m} element(s) per channel")
        mu = x.data.mean(axis=axes, dtype=np.float64).astype(x.dtype)
        xc = x.data - mu.reshape(bshape)
        var = (xc * xc).mean(axis=axes, dtype=np.float64).astype(x.dtype)
        mom = state.momentum
        state.mean[...] = (1 - mom) * state.mean + mom * mu
        state.var[...] = (1 - mom) * state.var + mom * var * (m / (m - 1))
    else:
        mu, var = state.mean.astype(x.dtype), state.var.astype(x.dtype)
        xc = x.data - mu.reshape(bshape)
    invstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * invstd.reshape(bshape)
    del xc
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    gd = gamma.data

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gd.reshape(bshape)
            if train:
                s1 = gxhat.sum(axis=axes, keepdims=True)
                s2 = (gxhat * xhat).sum(axis=axes, keepdims=True)
                gx = (gxhat - (s1 + xhat * s2) * dt(1.0 / m)) * invstd.reshape(bshape)
            else:
                gx = gxhat * invstd.reshape(bshape)
        return gx, ggamma, gbeta

    return make_output(out, (x, gamma, beta), backward, "batchnorm", saved=(xhat,))
