"""Declarative layer specifications.

A :class:`LayerSpec` carries the hyperparameters of one primitive and knows
its parameter shapes and output shape, so networks can be planned without
allocating activations.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from math import prod

import numpy as np

from ..errors import ConfigInvalid, ShapeMismatch, WindowTooLarge
from . import ops
from .tensor import Tensor

KINDS = (
    "conv2d", "conv3d", "maxpool2d", "maxpool3d", "deconv2d", "deconv3d",
    "concat", "batchnorm", "leakyrelu", "softmax",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    slope: float = 0.01
    eps: float = 1e-5
    momentum: float = 0.1
    bias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigInvalid(f"unknown layer kind {self.kind!r}")
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ConfigInvalid(f"{self.kind}: kernel >= 1, stride >= 1, padding >= 0 required")
        if not 0 <= self.slope < 1:
            raise ConfigInvalid(f"negative slope {self.slope} outside [0, 1)")
        if self.eps <= 0 or not 0 <= self.momentum <= 1:
            raise ConfigInvalid("batchnorm needs eps > 0 and momentum in [0, 1]")
        if self.kind.startswith(("conv", "deconv")) and (self.in_channels < 1 or self.out_channels < 1):
            raise ConfigInvalid(f"{self.kind} needs positive channel counts")
        if self.kind == "batchnorm" and self.out_channels < 1:
            raise ConfigInvalid("batchnorm needs a positive channel count")

    @property
    def ndim(self):
        return 3 if self.kind.endswith("3d") else 2

    def to_dict(self):
        return asdict(self)

    def param_shapes(self) -> dict:
        k, d = self.kernel, self.ndim
        if self.kind.startswith("conv"):
            shapes = {"weight": (self.out_channels, self.in_channels) + (k,) * d}
        elif self.kind.startswith("deconv"):
            shapes = {"weight": (self.in_channels, self.out_channels) + (k,) * d}
        elif self.kind == "batchnorm":
            return {"gamma": (self.out_channels,), "beta": (self.out_channels,)}
        else:
            return {}
        if self.bias:
            shapes["bias"] = (self.out_channels,)
        return shapes

    def param_count(self) -> int:
        return sum(prod(s) for s in self.param_shapes().values())

    def output_shape(self, *inputs) -> tuple:
        """Output shape for input shape(s) ``(N, C, *spatial)``."""
        x = tuple(inputs[0])
        kind = self.kind
        if kind == "concat":
            if len(inputs) != 2:
                raise ShapeMismatch("concat takes two inputs")
            a, b = tuple(inputs[0]), tuple(inputs[1])
            if len(a) != len(b) or a[0] != b[0] or a[2:] != b[2:]:
                raise ShapeMismatch(f"concat sources {a} and {b} differ outside channels")
            return (a[0], a[1] + b[1]) + a[2:]
        if kind in ("batchnorm", "leakyrelu", "softmax"):
            if kind == "batchnorm" and x[1] != self.out_channels:
                raise ShapeMismatch(f"batchnorm over {self.out_channels} channels got {x[1]}")
            return x
        d = self.ndim
        if len(x) != d + 2:
            raise ShapeMismatch(f"{kind} expects rank {d + 2}, got {x}")
        sp = x[2:]
        if kind.startswith("conv"):
            if x[1] != self.in_channels:
                raise ShapeMismatch(f"{kind} expects {self.in_channels} channels, got {x[1]}")
            out = tuple(ops.conv_output_size(s, self.kernel, self.stride, self.padding) for s in sp)
            return (x[0], self.out_channels) + out
        if kind.startswith("maxpool"):
            if any(self.kernel > s for s in sp):
                raise WindowTooLarge(f"window {self.kernel} exceeds {sp}")
            return x[:2] + tuple((s - self.kernel) // self.stride + 1 for s in sp)
        if kind.startswith("deconv"):
            if x[1] != self.in_channels:
                raise ShapeMismatch(f"{kind} expects {self.in_channels} channels, got {x[1]}")
            outpad = self.output_padding
            return (x[0], self.out_channels) + tuple(
                (s - 1) * self.stride - 2 * self.padding + self.kernel + outpad for s in sp)
        raise ConfigInvalid(kind)

    @property
    def output_padding(self):
        """Extra trailing rows that make a transposed conv scale extents by exactly ``stride``."""
        return max(0, self.stride - (self.kernel - 2 * self.padding))

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> dict:
        """He-normal weights, zero biases, unit gamma, zero beta."""
        params = {}
        for name, shape in self.param_shapes().items():
            if name == "weight":
                fan_in = prod(shape[1:]) if self.kind.startswith("conv") else shape[0] * prod(shape[2:])
                std = np.sqrt(2.0 / ((1 + self.slope ** 2) * fan_in))
                arr = rng.standard_normal(shape) * std
            elif name == "gamma":
                arr = np.ones(shape)
            else:
                arr = np.zeros(shape)
            params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
        return params

    def apply(self, inputs, params, state=None, train=True):
        kind = self.kind
        x = inputs[0]
        if kind.startswith("conv"):
            return ops.conv(x, params["weight"], params.get("bias"), self.stride, self.padding)
        if kind.startswith("deconv"):
            return ops.deconv(x, params["weight"], params.get("bias"), self.stride,
                              self.padding, self.output_padding)
        if kind.startswith("maxpool"):
            return ops.maxpool(x, self.kernel, self.stride)
        if kind == "concat":
            return ops.concat_channels(inputs[0], inputs[1])
        if kind == "batchnorm":
            return ops.batchnorm(x, params["gamma"], params["beta"], state, train)
        if kind == "leakyrelu":
            return ops.leaky_relu(x, self.slope)
        if kind == "softmax":
            return ops.softmax_channels(x)
        raise ConfigInvalid(kind)
