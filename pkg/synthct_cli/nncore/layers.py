"""Fixed layer set with explicit forward/backward passes.

Every ``*_forward`` returns the output plus the context its ``*_backward``
needs, so one layer can run several forwards before any backward (the cycle
model pushes two different batches through each generator per step).
Layers accumulate parameter gradients into ``Parameter.grad``.
"""
from typing import Dict, Optional, Tuple

import torch
import torch.nn.functional as F
from torch.nn import grad as conv_grad

from models import NumericFailureError, ShapeMismatchError, debug_enabled

Tensor4 = torch.Tensor
_CHANNEL_DIMS = (0, 2, 3)


def check_tensor4(x: torch.Tensor, channels: Optional[int] = None, what: str = "input"):
    if x.dim() != 4:
        raise ShapeMismatchError(f"{what} must be a 4-D (N, C, H, W) tensor, got shape {tuple(x.shape)}")
    if channels is not None and x.shape[1] != channels:
        raise ShapeMismatchError(f"{what} expects {channels} channels, got {x.shape[1]}")


def guard_finite(x: torch.Tensor, op: str) -> torch.Tensor:
    if debug_enabled() and not torch.isfinite(x).all():
        raise NumericFailureError(f"non-finite values after {op}")
    return x


def _per_channel(v: torch.Tensor) -> torch.Tensor:
    return v[None, :, None, None]


class Parameter:
    def __init__(self, data: torch.Tensor):
        self.data = data
        self.grad = torch.zeros_like(data)

    def zero_grad(self):
        self.grad.zero_()


def conv2d_forward(x, weight, bias, stride, padding):
    return guard_finite(F.conv2d(x, weight, bias, stride=stride, padding=padding), "conv2d")


def conv2d_backward(x, weight, grad_out, stride, padding):
    grad_in = conv_grad.conv2d_input(x.shape, weight, grad_out, stride=stride, padding=padding)
    grad_w = conv_grad.conv2d_weight(x, weight.shape, grad_out, stride=stride, padding=padding)
    return grad_in, grad_w, grad_out.sum(dim=_CHANNEL_DIMS)


def tconv2d_forward(x, weight, bias, stride, padding):
    return guard_finite(F.conv_transpose2d(x, weight, bias, stride=stride, padding=padding), "tconv2d")


def tconv2d_backward(x, weight, grad_out, stride, padding):
    # a transposed convolution is the adjoint of conv2d with the same weight
    grad_in = F.conv2d(grad_out, weight, stride=stride, padding=padding)
    grad_w = conv_grad.conv2d_weight(grad_out, weight.shape, x, stride=stride, padding=padding)
    return grad_in, grad_w, grad_out.sum(dim=_CHANNEL_DIMS)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    if training:
        mean = x.mean(dim=_CHANNEL_DIMS)
        var = x.var(dim=_CHANNEL_DIMS, unbiased=False)
        n = x.numel() // x.shape[1]
        running_mean.mul_(1.0 - momentum).add_(momentum * mean)
        running_var.mul_(1.0 - momentum).add_(momentum * var * n / max(n - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv_std = torch.rsqrt(var + eps)
    x_hat = (x - _per_channel(mean)) * _per_channel(inv_std)
    y = _per_channel(gamma) * x_hat + _per_channel(beta)
    return guard_finite(y, "batchnorm"), (x_hat, inv_std, gamma, training)


def batchnorm_backward(ctx, grad_out):
    x_hat, inv_std, gamma, training = ctx
    grad_gamma = (grad_out * x_hat).sum(dim=_CHANNEL_DIMS)
    grad_beta = grad_out.sum(dim=_CHANNEL_DIMS)
    d_hat = grad_out * _per_channel(gamma)
    if not training:
        return d_hat * _per_channel(inv_std), grad_gamma, grad_beta
    m = x_hat.numel() // x_hat.shape[1]
    grad_in = _per_channel(inv_std) / m * (
        m * d_hat
        - d_hat.sum(dim=_CHANNEL_DIMS, keepdim=True)
        - x_hat * (d_hat * x_hat).sum(dim=_CHANNEL_DIMS, keepdim=True))
    return grad_in, grad_gamma, grad_beta


def leaky_relu_forward(x, slope):
    return torch.where(x > 0, x, slope * x), x


def leaky_relu_backward(x, grad_out, slope):
    return grad_out * torch.where(x > 0, torch.ones_like(x), torch.full_like(x, slope))


def tanh_forward(x):
    y = torch.tanh(x)
    return y, y


def tanh_backward(y, grad_out):
    return grad_out * (1.0 - y * y)


def dropout_forward(x, rate, training, generator=None):
    if not training or rate == 0.0:
        return x, None
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= rate
    mask = keep.to(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask, grad_out):
    return grad_out if mask is None else grad_out * mask


class Layer:
    training = True

    def parameters(self) -> Dict[str, Parameter]:
        return {}

    def buffers(self) -> Dict[str, torch.Tensor]:
        return {}

    def forward(self, x) -> Tuple[torch.Tensor, object]:
        raise NotImplementedError

    def backward(self, ctx, grad_out) -> torch.Tensor:
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, in_channels, out_channels, kernel=4, stride=2, padding=1,
                 generator=None, dtype=torch.float32, init_std=0.02):
        self.in_channels = in_channels
        self.stride, self.padding = stride, padding
        weight = torch.empty(out_channels, in_channels, kernel, kernel, dtype=dtype)
        self.weight = Parameter(weight.normal_(0.0, init_std, generator=generator))
        self.bias = Parameter(torch.zeros(out_channels, dtype=dtype))

    def parameters(self):
        return {'weight': self.weight, 'bias': self.bias}

    def forward(self, x):
        check_tensor4(x, self.in_channels, "conv2d input")
        return conv2d_forward(x, self.weight.data, self.bias.data, self.stride, self.padding), x

    def backward(self, x, grad_out):
        grad_in, grad_w, grad_b = conv2d_backward(x, self.weight.data, grad_out, self.stride, self.padding)
        self.weight.grad += grad_w
        self.bias.grad += grad_b
        return grad_in


class ConvTranspose2d(Layer):
    def __init__(self, in_channels, out_channels, kernel=4, stride=2, padding=1,
                 generator=None, dtype=torch.float32, init_std=0.02):
        self.in_channels = in_channels
        self.stride, self.padding = stride, padding
        weight = torch.empty(in_channels, out_channels, kernel, kernel, dtype=dtype)
        self.weight = Parameter(weight.normal_(0.0, init_std, generator=generator))
        self.bias = Parameter(torch.zeros(out_channels, dtype=dtype))

    def parameters(self):
        return {'weight': self.weight, 'bias': self.bias}

    def forward(self, x):
        check_tensor4(x, self.in_channels, "tconv2d input")
        return tconv2d_forward(x, self.weight.data, self.bias.data, self.stride, self.padding), x

    def backward(self, x, grad_out):
        grad_in, grad_w, grad_b = tconv2d_backward(x, self.weight.data, grad_out, self.stride, self.padding)
        self.weight.grad += grad_w
        self.bias.grad += grad_b
        return grad_in


class BatchNorm2d(Layer):
    def __init__(self, channels, momentum=0.1, eps=1e-5, generator=None, dtype=torch.float32, init_std=0.02):
        self.momentum, self.eps = momentum, eps
        gamma = torch.empty(channels, dtype=dtype).normal_(1.0, init_std, generator=generator)
        self.gamma = Parameter(gamma)
        self.beta = Parameter(torch.zeros(channels, dtype=dtype))
        self.running_mean = torch.zeros(channels, dtype=dtype)
        self.running_var = torch.ones(channels, dtype=dtype)

    def parameters(self):
        return {'gamma': self.gamma, 'beta': self.beta}

    def buffers(self):
        return {'running_mean': self.running_mean, 'running_var': self.running_var}

    def forward(self, x):
        check_tensor4(x, self.gamma.data.shape[0], "batchnorm input")
        return batchnorm_forward(x, self.gamma.data, self.beta.data, self.running_mean, self.running_var,
                                 self.training, self.momentum, self.eps)

    def backward(self, ctx, grad_out):
        grad_in, grad_gamma, grad_beta = batchnorm_backward(ctx, grad_out)
        self.gamma.grad += grad_gamma
        self.beta.grad += grad_beta
        return grad_in


class LeakyReLU(Layer):
    def __init__(self, slope=0.2):
        self.slope = slope

    def forward(self, x):
        return leaky_relu_forward(x, self.slope)

    def backward(self, x, grad_out):
        return leaky_relu_backward(x, grad_out, self.slope)


class ReLU(LeakyReLU):
    def __init__(self):
        super().__init__(slope=0.0)


class Tanh(Layer):
    def forward(self, x):
        return tanh_forward(x)

    def backward(self, y, grad_out):
        return tanh_backward(y, grad_out)


class Dropout(Layer):
    def __init__(self, rate=0.5, generator=None):
        self.rate = rate
        self.generator = generator

    def forward(self, x):
        return dropout_forward(x, self.rate, self.training, self.generator)

    def backward(self, mask, grad_out):
        return dropout_backward(mask, grad_out)
