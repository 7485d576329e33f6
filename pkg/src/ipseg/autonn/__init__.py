"""Reverse-mode differentiable tensor engine on numpy."""
from .gradcheck import finite_diff_check, finite_diff_elements, rel_error
from .layers import KINDS, LayerSpec
from .memory import TRACKER, AllocationTracker
from .ops import (
    BatchNormState,
    batchnorm,
    concat_channels,
    conv,
    conv2d,
    conv3d,
    deconv,
    deconv2d,
    deconv3d,
    leaky_relu,
    maxpool,
    maxpool2d,
    maxpool3d,
    relu,
    softmax_channels,
)
from .optim import SGD, Adam, make_optimizer
from .tensor import DisconnectedParameter, Tensor, as_tensor, backward, no_grad

__all__ = [
    "TRACKER", "AllocationTracker", "Tensor", "as_tensor", "backward", "no_grad",
    "DisconnectedParameter", "LayerSpec", "KINDS", "BatchNormState",
    "conv", "conv2d", "conv3d", "deconv", "deconv2d", "deconv3d", "maxpool", "maxpool2d",
    "maxpool3d", "concat_channels", "batchnorm", "leaky_relu", "relu", "softmax_channels",
    "SGD", "Adam", "make_optimizer", "finite_diff_check", "finite_diff_elements", "rel_error",
]
