"""
==========================
Checking gradients by hand
==========================

Every differentiable op is compared against central differences in
float64. The network-level check perturbs individual weights of a small
IP-UNet and compares the change in a random linear readout of its output.
"""
import numpy as np

from ipseg.autonn import Tensor, backward, conv2d, deconv2d, finite_diff_check, finite_diff_elements
from ipseg.netbuild import NetConfig, build_ipunet

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
w = Tensor(rng.standard_normal((4, 2, 3, 3)), requires_grad=True)
b = Tensor(rng.standard_normal(4), requires_grad=True)
print("conv2d    max rel error", finite_diff_check(lambda x, w, b: conv2d(x, w, b, 1, 1), [x, w, b]))

wt = Tensor(rng.standard_normal((2, 3, 3, 3)), requires_grad=True)
bt = Tensor(rng.standard_normal(3), requires_grad=True)
print("deconv2d  max rel error", finite_diff_check(deconv2d, [x, wt, bt]))

net = build_ipunet(NetConfig(width_factor=1 / 16), seed=0, dtype=np.float64)
inp = Tensor(rng.standard_normal((2, 3, 32, 32)))
readout = rng.standard_normal((2, 3, 32, 32))


def loss():
    return (net.forward(inp, train=True) * readout).sum()


net.zero_grad()
backward(loss())
for name in ("enc0.conv1.weight", "bottleneck.conv2.weight", "head.conv.weight"):
    p = net.params[name]
    idx = tuple(int(rng.integers(n)) for n in p.shape)
    err = finite_diff_elements(loss, p, [idx], eps=1e-6)[0]
    print(f"{name:26s} {idx}  rel error {err:.2e}")
