"""Dense-tensor reverse-mode automatic differentiation."""
from .functional import (
    add, channel_linear, channel_mean, complex_mode_mix, concat_channels,
    conv1d_periodic, dense, div, gather_last, index, irfft_pad, l2_norm,
    imag, maxpool1d, mean, mlp, mul, neg, real, relu, reshape, rfft_truncate, softplus,
    square, sub, sum, upsample1d,
)
from .gradcheck import gradient_check, numerical_gradient
from .tensor import (
    Parameter, ShapeError, Tensor, as_tensor, backward, is_grad_enabled, no_grad,
)

__all__ = [
    "Tensor", "Parameter", "ShapeError", "as_tensor", "backward", "no_grad",
    "is_grad_enabled", "gradient_check", "numerical_gradient",
    "add", "sub", "mul", "div", "neg", "index", "reshape", "sum", "mean",
    "real", "imag", "square", "relu", "softplus", "l2_norm", "gather_last", "channel_mean",
    "conv1d_periodic", "channel_linear", "dense", "mlp", "rfft_truncate",
    "irfft_pad", "complex_mode_mix", "maxpool1d", "upsample1d", "concat_channels",
]
