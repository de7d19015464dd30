"""Dense NCHW tensors and the convolution/normalization kernels the networks need.

Tensors are plain C-contiguous numpy arrays in (n, c, h, w) layout.
"""

from . import lpt
from .kernels import (
    add,
    available_backends,
    batch_norm,
    broadcast_add,
    conv2d,
    conv_transpose2d,
    get_backend,
    global_sum_pool,
    layer_norm,
    max_pool2d,
    mul,
    relu,
    set_backend,
    spatial_softmax,
    use_backend,
)
from .params import ConvParams, NormParams

__all__ = [
    "ConvParams", "NormParams", "add", "available_backends", "batch_norm",
    "broadcast_add", "conv2d", "conv_transpose2d", "get_backend",
    "global_sum_pool", "layer_norm", "lpt", "max_pool2d", "mul", "relu",
    "set_backend", "spatial_softmax", "use_backend",
]
