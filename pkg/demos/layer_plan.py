"""
=====================
The IP-UNet layer map
=====================

The shape plan walks the network symbolically, so even the full-width
network on 512x512 inputs is laid out without allocating a single weight.
Two input channels reproduce the published layer table; three is the
natural count for [CVP, AvgIP, MIP].
"""
from ipseg.netbuild import NetConfig, build_ipunet, build_unet3d, param_count

net = build_ipunet(NetConfig(in_channels=2, width_factor=1.0))
plan = net.shape_plan((2, 512, 512))
print(plan.to_text())
print("trainable parameters:", plan.total_params)

# The desk-scale model used by the demos and the benchmark.
small = build_ipunet(NetConfig(width_factor=0.125))
print("w=1/8 IP-UNet:", param_count(small), "parameters")

# The volumetric baseline on one 64x64x32 volume.
vol_plan = build_unet3d(NetConfig(width_factor=0.125)).shape_plan((1, 64, 64, 32))
print("3D UNet bottleneck:", [r.output for r in vol_plan.rows if r.type == "conv"][9])
print("3D UNet parameters:", vol_plan.total_params)
