import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipseg.autonn import Tensor
from ipseg.errors import ConfigInvalid, IndivisibleInput, ShapeMismatch
from ipseg.netbuild import (
    NetConfig,
    build_ipunet,
    build_unet2d_slice,
    build_unet3d,
    fmt_shape,
    param_count,
    shape_plan,
)

# Layer table for w=1, 2 input channels, 3 classes, 512x512 input:
# No, Phase, Type, Input, Filter, Stride/Size, Output
GOLDEN = """\
1 Encode conv 512X512X2 64 1/3X3 512X512X64
2 Encode conv 512X512X64 64 1/3X3 512X512X64
3 Encode max 512X512X64 - 2/2X2 256X256X64
4 Encode conv 256X256X64 128 1/3X3 256X256X128
5 Encode conv 256X256X128 128 1/3X3 256X256X128
6 Encode max 256X256X128 - 2/2X2 128X128X128
7 Encode conv 128X128X128 256 1/3X3 128X128X256
8 Encode conv 128X128X256 256 1/3X3 128X128X256
9 Encode max 64X64X256 - 2/2X2 64X64X256
10 Encode conv 64X64X512 512 1/3X3 64X64X512
11 Encode conv 64X64X512 512 1/3X3 64X64X512
12 Encode max 32X32X512 - 2/2X2 32X32X512
13 Encode conv 32X32X1024 1024 1/3X3 32X32X1024
14 Encode conv 32X32X1024 1024 1/3X3 32X32X1024
15 Decode deconv 32X32X1024 512 2/3X3 64X64X512
16 Decode concat 64X64X512 - - 64X64X1024
17 Decode conv 64X64X1024 512 1/3X3 64X64X512
18 Decode conv 64X64X512 512 1/3X3 64X64X512
19 Decode deconv 64X64X512 256 2/3X3 128X128X256
20 Decode concat 128X128X512 - - 128X128X512
21 Decode conv 128X128X512 256 1/3X3 128X128X256
22 Decode conv 128X128X256 256 1/3X3 128X128X256
23 Decode deconv 128X128X256 128 2/3X3 256X256X128
24 Decode concat 256X256X128 - - 256X256X256
25 Decode conv 256X256X256 128 1/3X3 256X256X128
26 Decode conv 256X256X128 128 1/3X3 256X256X128
27 Decode deconv 256X256X128 64 2/3X3 512X512X64
28 Decode concat 512X512X64 - - 512X512X128
29 Decode conv 512X512X128 64 1/3X3 512X512X64
30 Decode conv 512X512X64 64 1/3X3 512X512X64
31 Decode conv 512X512X64 3 1/1X1 512X512X3
"""
CONSISTENT = [*range(1, 9), 14, 15, 17, 18, 19, 21, 22, 23, *range(25, 32)]
# rows whose printed input cannot follow from the previous row, with the chained value
RECONSTRUCTED_INPUTS = {9: "128X128X256", 10: "64X64X256", 12: "64X64X512", 13: "32X32X512",
                        20: "128X128X256"}


def golden_rows():
    rows = {}
    for line in GOLDEN.splitlines():
        no, phase, kind, inp, filt, stride, out = line.split()
        rows[int(no)] = (phase, kind, inp, "" if filt == "-" else filt, "" if stride == "-" else stride, out)
    return rows


def plan_rows(plan):
    return {r.no: (r.phase, r.type, fmt_shape(r.input), "" if r.filter is None else str(r.filter),
                   r.stride_size, fmt_shape(r.output)) for r in plan.rows}


@pytest.fixture(scope="module")
def table_plan():
    return shape_plan(build_ipunet(NetConfig(in_channels=2, width_factor=1.0)), (2, 512, 512))


def test_plan_matches_consistent_rows_verbatim(table_plan):
    assert len(table_plan) == 31
    ours, gold = plan_rows(table_plan), golden_rows()
    for no in CONSISTENT:
        assert ours[no] == gold[no], no


def test_plan_honours_every_output(table_plan):
    ours, gold = plan_rows(table_plan), golden_rows()
    for no in range(1, 32):
        assert ours[no][5] == gold[no][5], no


def test_reconstructed_inputs_chain(table_plan):
    ours = plan_rows(table_plan)
    for no, shape in RECONSTRUCTED_INPUTS.items():
        assert ours[no][2] == shape
    for prev, row in zip(table_plan.rows, table_plan.rows[1:]):
        if row.type != "concat":
            assert row.input == prev.output


def _tally(cin, k, widths, dims=2):
    # independent per-layer count: weight + bias + BN affine
    kk = 3 ** dims

    def conv(a, b):
        return kk * a * b + b + 2 * b

    total, c = 0, cin
    for w in widths[:-1]:
        total += conv(c, w) + conv(w, w)
        c = w
    total += conv(c, widths[-1]) + conv(widths[-1], widths[-1])
    c = widths[-1]
    for w in reversed(widths[:-1]):
        total += kk * c * w + w
        total += conv(2 * w, w) + conv(w, w)
        c = w
    return total + c * k + k


def test_param_count_tally(table_plan):
    net = build_ipunet(NetConfig(in_channels=2, width_factor=1.0))
    widths = [64, 128, 256, 512, 1024]
    assert param_count(net) == _tally(2, 3, widths) == table_plan.total_params
    assert table_plan[0].params == 1216 + 128
    net3 = build_unet3d(NetConfig(width_factor=0.25))
    assert param_count(net3) == _tally(1, 3, [16, 32, 64, 128, 256], dims=3)


def test_slice_net_is_1152_smaller():
    ip = build_ipunet(NetConfig(width_factor=1.0))
    sl = build_unet2d_slice(NetConfig(width_factor=1.0))
    assert param_count(ip) - param_count(sl) == 1152
    diff = [(a.name, a.spec, b.spec) for a, b in zip(ip.layers, sl.layers) if a.spec != b.spec]
    assert [d[0] for d in diff] == ["enc0.conv1"]
    assert diff[0][1].in_channels == 3 and diff[0][2].in_channels == 1
    pi, ps = shape_plan(ip, (3, 64, 64)), shape_plan(sl, (1, 64, 64))
    assert [r.output[2:] for r in pi.rows] == [r.output[2:] for r in ps.rows]


def test_unet3d_shapes():
    net = build_unet3d(NetConfig(width_factor=1.0))
    assert net.layers[0].spec.param_count() == 1792
    plan = shape_plan(net, (1, 64, 64, 32))
    bottleneck = [r for r in plan.rows if r.type == "conv"][9]
    assert bottleneck.output[2:] == (4, 4, 2)
    assert plan.last.output == (1, 3, 64, 64, 32)


def test_unet3d_forward():
    # depth 3 so an 8-voxel extent stays divisible by 2**depth
    net = build_unet3d(NetConfig(width_factor=1 / 16, depth=3), seed=0)
    x = Tensor(np.random.default_rng(0).normal(size=(2, 1, 8, 8, 8)).astype(np.float32))
    y = net.forward(x)
    assert y.shape == (2, 3, 8, 8, 8)
    np.testing.assert_allclose(y.data.sum(axis=1), 1, atol=1e-5)


def test_ipunet_forward_and_examples(table_plan):
    assert fmt_shape(table_plan[0].output) == "512X512X64"
    assert fmt_shape(table_plan[14].input) == "32X32X1024" and fmt_shape(table_plan[14].output) == "64X64X512"
    assert fmt_shape(table_plan.last.output) == "512X512X3"
    net = build_ipunet(NetConfig(width_factor=1 / 16), seed=1)
    y = net.forward(Tensor(np.random.default_rng(1).normal(size=(2, 3, 32, 32)).astype(np.float32)))
    assert y.shape == (2, 3, 32, 32)


def test_halved_input_halves_plan():
    net = build_ipunet(NetConfig(in_channels=2, width_factor=1.0))
    full, half = shape_plan(net, (2, 512, 512)), shape_plan(net, (2, 256, 256))
    for a, b in zip(full.rows, half.rows):
        assert tuple(s // 2 for s in a.output[2:]) == b.output[2:]
        assert a.output[1] == b.output[1]


def test_width_rounding_and_validation():
    cfg = NetConfig(width_factor=1 / 3)
    assert [cfg.width(level) for level in range(5)] == [22, 43, 86, 171, 342]
    assert NetConfig(width_factor=1 / 64).width(0) == 1
    assert param_count(build_ipunet(NetConfig(width_factor=0.5))) < param_count(build_ipunet(NetConfig()))
    for bad in [dict(width_factor=0.0), dict(width_factor=1.5), dict(depth=0), dict(num_classes=1),
                dict(dims=4), dict(base_width=1, width_factor=0.5)]:
        with pytest.raises(ConfigInvalid):
            NetConfig(**bad)
    with pytest.raises(ConfigInvalid):
        build_ipunet(NetConfig(dims=3))


def test_input_checks():
    net = build_ipunet(NetConfig(width_factor=1 / 16))
    with pytest.raises(IndivisibleInput):
        shape_plan(net, (3, 40, 40))
    with pytest.raises(ShapeMismatch):
        shape_plan(net, (2, 32, 32))


def test_plan_is_allocation_free():
    net = build_ipunet(NetConfig(width_factor=1.0))
    shape_plan(net, (3, 512, 512))
    assert net._params is None


def test_plan_text_and_json(table_plan):
    text = table_plan.to_text().splitlines()
    assert text[0].split(" | ")[:7] == ["No", "Phase ", "Type  ", "Input      ", "Filter", "Stride/Size",
                                         "Output     "]
    assert len(text) == 33
    rows = json.loads(table_plan.to_json())
    assert rows[0]["output"] == [1, 64, 512, 512] and rows[30]["filter"] == 3


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1 / 16, 1 / 8, 0.3, 1.0]), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3))
def test_plan_chaining_property(w, depth, a, b):
    step = 2 ** depth
    net = build_ipunet(NetConfig(width_factor=w, depth=depth))
    plan = shape_plan(net, (3, step * a, step * b))
    assert plan.last.output == (1, 3, step * a, step * b)
    for prev, row in zip(plan.rows, plan.rows[1:]):
        if row.type != "concat":
            assert row.input == prev.output
    assert plan.total_params == param_count(net)
