"""UNet builders (projection, slice-wise and volumetric) and shape planning.

All three networks share one topology: ``depth`` encoder levels of two
conv-BN-LeakyReLU blocks followed by 2x2 max pooling, a two-conv bottleneck,
mirrored decoder levels (stride-2 transposed conv, skip concat, two convs)
and a 1x1 conv + softmax head.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autonn import BatchNormState, LayerSpec, Tensor
from .errors import ConfigInvalid, IndivisibleInput, ShapeMismatch


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 3
    num_classes: int = 3
    base_width: int = 64
    width_factor: float = 1.0
    depth: int = 4
    dims: int = 2
    slope: float = 0.01
    batchnorm: bool = True
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.in_channels < 1 or self.num_classes < 2:
            raise ConfigInvalid("need in_channels >= 1 and num_classes >= 2")
        if self.depth < 1:
            raise ConfigInvalid(f"depth must be >= 1, got {self.depth}")
        if not 0 < self.width_factor <= 1:
            raise ConfigInvalid(f"width_factor must lie in (0, 1], got {self.width_factor}")
        if self.base_width * self.width_factor < 1 - 1e-9:
            raise ConfigInvalid("base_width * width_factor must be >= 1")
        if self.dims not in (2, 3):
            raise ConfigInvalid(f"dims must be 2 or 3, got {self.dims}")
        if not 0 <= self.slope < 1:
            raise ConfigInvalid(f"slope must be in [0, 1), got {self.slope}")

    def width(self, level: int) -> int:
        """Channel count at ``level`` (0 = full resolution), rounded up, at least 1."""
        raw = self.base_width * (2 ** level) * self.width_factor
        return max(1, math.ceil(round(raw, 9)))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Layer:
    name: str
    spec: LayerSpec
    inputs: tuple
    phase: str
    row: bool = False  # appears as a row of the layer table


@dataclass
class PlanRow:
    no: int
    phase: str
    type: str
    input: tuple
    filter: int | None
    stride_size: str
    output: tuple
    params: int


@dataclass
class ShapePlan:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    @property
    def last(self):
        return self.rows[-1]

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    def to_json(self) -> str:
        return json.dumps([{
            "no": r.no, "phase": r.phase, "type": r.type, "input": list(r.input),
            "filter": r.filter, "stride_size": r.stride_size, "output": list(r.output),
            "params": r.params,
        } for r in self.rows], indent=1)

    def to_text(self) -> str:
        head = ("No", "Phase", "Type", "Input", "Filter", "Stride/Size", "Output", "Params")
        body = [(str(r.no), r.phase, r.type, fmt_shape(r.input), "" if r.filter is None else str(r.filter),
                 r.stride_size, fmt_shape(r.output), str(r.params)) for r in self.rows]
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        lines = [" | ".join(c.ljust(w) for c, w in zip(line, widths)) for line in [head] + body]
        lines.insert(1, "-+-".join("-" * w for w in widths))
        return "\n".join(lines)


def fmt_shape(shape) -> str:
    """``(N, C, *spatial)`` -> ``"HXWXC"`` as in the layer table."""
    return "X".join(str(s) for s in tuple(shape[2:]) + (shape[1],))


class Network:
    """Ordered layers with named skip wiring, parameters and BN running stats."""

    def __init__(self, cfg: NetConfig, layers, kind="ipunet", seed=0, dtype=np.float32):
        self.cfg = cfg
        self.kind = kind
        self.layers = list(layers)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self._check_wiring()
        self._params = None
        self._states = None
        self._last_use = {}
        for i, layer in enumerate(self.layers):
            for src in layer.inputs:
                self._last_use[src] = i
        self._output = self.layers[-1].name

    def _materialize(self):
        # parameters are created on first use so planning a full-size net stays cheap
        rng = np.random.default_rng(self.seed)
        params, states = {}, {}
        for layer in self.layers:
            for pname, t in layer.spec.init_params(rng, self.dtype).items():
                t.name = f"{layer.name}.{pname}"
                params[t.name] = t
            if layer.spec.kind == "batchnorm":
                states[layer.name] = BatchNormState(
                    layer.spec.out_channels, self.dtype, layer.spec.momentum, layer.spec.eps)
        self._params, self._states = params, states

    @property
    def params(self) -> dict:
        if self._params is None:
            self._materialize()
        return self._params

    @property
    def states(self) -> dict:
        if self._states is None:
            self._materialize()
        return self._states

    def _check_wiring(self):
        seen = {"input"}
        for layer in self.layers:
            for src in layer.inputs:
                if src not in seen:
                    raise ConfigInvalid(f"{layer.name} reads {src!r} before it is produced")
            if layer.spec.kind == "concat" and len(layer.inputs) != 2:
                raise ConfigInvalid(f"{layer.name} must have exactly two sources")
            seen.add(layer.name)

    # -- parameters
    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return dict(self.params)

    def buffers(self) -> dict:
        out = {}
        for name, st in self.states.items():
            out[f"{name}.running_mean"] = st.mean
            out[f"{name}.running_var"] = st.var
        return out

    def param_count(self) -> int:
        return sum(layer.spec.param_count() for layer in self.layers)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype):
        """Copy of this network with parameters and buffers cast to ``dtype``."""
        other = Network(self.cfg, self.layers, self.kind, self.seed, dtype)
        for name, p in self.params.items():
            other.params[name].data[...] = p.data
        for name, arr in self.buffers().items():
            other.buffers()[name][...] = arr
        return other

    # -- execution
    def _params_of(self, layer):
        prefix = layer.name + "."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def check_input(self, shape):
        shape = tuple(shape)
        if len(shape) != self.cfg.dims + 2:
            raise ShapeMismatch(f"expected rank {self.cfg.dims + 2} input, got {shape}")
        if shape[1] != self.cfg.in_channels:
            raise ShapeMismatch(f"expected {self.cfg.in_channels} input channels, got {shape[1]}")
        step = 2 ** self.cfg.depth
        if any(s % step for s in shape[2:]):
            raise IndivisibleInput(f"spatial extents {shape[2:]} not divisible by {step}")

    def forward(self, x, train=True) -> Tensor:
        """Class probabilities ``(N, K, *spatial)`` for input ``(N, C, *spatial)``."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        self.check_input(x.shape)
        values = {"input": x}
        del x
        for i, layer in enumerate(self.layers):
            ins = [values[s] for s in layer.inputs]
            values[layer.name] = layer.spec.apply(ins, self._params_of(layer),
                                                  self.states.get(layer.name), train)
            del ins
            for s in layer.inputs:
                if self._last_use.get(s) == i:
                    del values[s]
        return values[self._output]

    __call__ = forward

    def shape_plan(self, input_shape) -> ShapePlan:
        return shape_plan(self, input_shape)


_TYPE = {"conv2d": "conv", "conv3d": "conv", "maxpool2d": "max", "maxpool3d": "max",
         "deconv2d": "deconv", "deconv3d": "deconv", "concat": "concat"}


def _build(cfg: NetConfig, kind: str, seed=0, dtype=np.float32) -> Network:
    d = cfg.dims
    conv, pool, up = ("conv2d", "maxpool2d", "deconv2d") if d == 2 else ("conv3d", "maxpool3d", "deconv3d")
    layers = []

    def block(prefix, src, cin, cout, phase):
        for j in (1, 2):
            c_in = cin if j == 1 else cout
            layers.append(Layer(f"{prefix}.conv{j}", LayerSpec(conv, c_in, cout, 3, 1, 1), (src,), phase, True))
            src = f"{prefix}.conv{j}"
            if cfg.batchnorm:
                layers.append(Layer(f"{prefix}.bn{j}", LayerSpec(
                    "batchnorm", out_channels=cout, eps=cfg.bn_eps, momentum=cfg.bn_momentum), (src,), phase))
                src = f"{prefix}.bn{j}"
            layers.append(Layer(f"{prefix}.act{j}", LayerSpec("leakyrelu", slope=cfg.slope), (src,), phase))
            src = f"{prefix}.act{j}"
        return src

    src, cin = "input", cfg.in_channels
    skips = []
    for level in range(cfg.depth):
        width = cfg.width(level)
        src = block(f"enc{level}", src, cin, width, "Encode")
        skips.append(src)
        layers.append(Layer(f"enc{level}.pool", LayerSpec(pool, kernel=2, stride=2), (src,), "Encode", True))
        src, cin = f"enc{level}.pool", width
    src = block("bottleneck", src, cin, cfg.width(cfg.depth), "Encode")
    cin = cfg.width(cfg.depth)
    for level in reversed(range(cfg.depth)):
        width = cfg.width(level)
        layers.append(Layer(f"dec{level}.up", LayerSpec(up, cin, width, 3, 2, 1), (src,), "Decode", True))
        layers.append(Layer(f"dec{level}.cat", LayerSpec("concat"), (f"dec{level}.up", skips[level]),
                            "Decode", True))
        src = block(f"dec{level}", f"dec{level}.cat", 2 * width, width, "Decode")
        cin = width
    layers.append(Layer("head.conv", LayerSpec(conv, cin, cfg.num_classes, 1, 1, 0), (src,), "Decode", True))
    layers.append(Layer("head.softmax", LayerSpec("softmax"), ("head.conv",), "Decode"))
    return Network(cfg, layers, kind, seed, dtype)


def build_ipunet(cfg: NetConfig = NetConfig(), seed=0, dtype=np.float32) -> Network:
    """2D UNet over stacked projection channels."""
    if cfg.dims != 2:
        raise ConfigInvalid("the projection network is 2D")
    return _build(cfg, "ipunet", seed, dtype)


def build_unet2d_slice(cfg: NetConfig = NetConfig(), seed=0, dtype=np.float32) -> Network:
    """Same topology as :func:`build_ipunet` on single-channel slices."""
    return _build(replace(cfg, in_channels=1, dims=2), "unet2d_slice", seed, dtype)


def build_unet3d(cfg: NetConfig = NetConfig(), seed=0, dtype=np.float32) -> Network:
    """Volumetric counterpart with 3x3x3 convs, 2x2x2 pooling and 3D transposed convs."""
    return _build(replace(cfg, in_channels=1, dims=3), "unet3d", seed, dtype)


BUILDERS = {"ipunet": build_ipunet, "unet2d_slice": build_unet2d_slice, "unet3d": build_unet3d}


def shape_plan(net: Network, input_shape) -> ShapePlan:
    """Per-row shapes and parameter counts, computed without touching tensors.

    ``input_shape`` is ``(C, *spatial)`` or ``(N, C, *spatial)``. BN and
    activation layers are folded into the conv row they follow, and the
    softmax into the head row, giving the layer-table view.
    """
    shape = tuple(int(s) for s in input_shape)
    if len(shape) == net.cfg.dims + 1:
        shape = (1,) + shape
    net.check_input(shape)
    shapes = {"input": shape}
    plan = ShapePlan()
    for layer in net.layers:
        ins = [shapes[s] for s in layer.inputs]
        out = layer.spec.output_shape(*ins)
        shapes[layer.name] = out
        spec = layer.spec
        if layer.row:
            k = spec.kernel
            size = "X".join([str(k)] * net.cfg.dims)
            stride_size = "" if spec.kind == "concat" else f"{spec.stride}/{size}"
            filt = spec.out_channels if _TYPE[spec.kind] in ("conv", "deconv") else None
            plan.rows.append(PlanRow(len(plan.rows) + 1, layer.phase, _TYPE[spec.kind], ins[0],
                                     filt, stride_size, out, spec.param_count()))
        else:
            plan.rows[-1].params += spec.param_count()
            plan.rows[-1].output = out
    return plan


def param_count(net: Network) -> int:
    return net.param_count()
