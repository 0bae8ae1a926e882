"""Stateful layer wrappers around the functional kernels.

Each layer caches whatever its backward pass needs during forward; a layer is
therefore a one-slot tape: call ``forward`` then ``backward`` once, in that
order. Parameter gradients accumulate into ``Parameter.grad``. All layers
share the signature ``forward(x, mode="train", rng=None)`` so containers can
thread training mode and randomness blindly.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .params import ConfigurationError, Module, Parameter, kaiming_normal


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0,
                 groups=1, bias=False, rng=None, dtype=np.float64):
        kh, kw = ops._pair(kernel)
        if in_channels % groups or out_channels % groups:
            raise ConfigurationError(
                f"conv channels ({in_channels} -> {out_channels}) not divisible "
                f"by groups {groups}"
            )
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = (kh, kw)
        self.stride = ops._pair(stride)
        self.padding = ops._pair(padding)
        self.groups = groups
        fan_in = (in_channels // groups) * kh * kw
        shape = (out_channels, in_channels // groups, kh, kw)
        if rng is None:
            w = np.zeros(shape, dtype=dtype)
        else:
            w = kaiming_normal(rng, shape, fan_in, dtype)
        self.weight = Parameter(w, decay_eligible=True)
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype), decay_eligible=False) if bias else None
        self._x = None

    def forward(self, x, mode="train", rng=None):
        self._x = x
        b = self.bias.value if self.bias is not None else None
        return ops.conv2d(x, self.weight.value, b, self.stride, self.padding, self.groups)

    def backward(self, grad_out):
        gx, gw, gb = ops.conv2d_backward(
            grad_out, self._x, self.weight.value, self.stride, self.padding,
            self.groups, has_bias=self.bias is not None,
        )
        self.weight.accumulate(gw)
        if self.bias is not None:
            self.bias.accumulate(gb)
        return gx


class Linear(Module):
    """Grouped fully-connected layer on [N, F] inputs."""

    def __init__(self, in_features, out_features, groups=1, bias=True,
                 rng=None, dtype=np.float64):
        if in_features % groups or out_features % groups:
            raise ConfigurationError(
                f"linear features ({in_features} -> {out_features}) not divisible "
                f"by groups {groups}"
            )
        self.in_features = in_features
        self.out_features = out_features
        self.groups = groups
        shape = (out_features, in_features // groups)
        if rng is None:
            w = np.zeros(shape, dtype=dtype)
        else:
            w = kaiming_normal(rng, shape, in_features // groups, dtype)
        self.weight = Parameter(w, decay_eligible=True)
        self.bias = Parameter(np.zeros(out_features, dtype=dtype), decay_eligible=False) if bias else None
        self._x = None

    def forward(self, x, mode="train", rng=None):
        self._x = x
        b = self.bias.value if self.bias is not None else None
        return ops.fully_connected(x, self.weight.value, b, self.groups)

    def backward(self, grad_out):
        gx, gw, gb = ops.fully_connected_backward(
            grad_out, self._x, self.weight.value, self.groups,
            has_bias=self.bias is not None,
        )
        self.weight.accumulate(gw)
        if self.bias is not None:
            self.bias.accumulate(gb)
        return gx


class BatchNorm(Module):
    """Per-channel batch norm for rank-2 or rank-4 inputs."""

    def __init__(self, num_features, momentum=0.1, eps=1e-5, dtype=np.float64):
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(num_features, dtype=dtype), decay_eligible=False)
        self.beta = Parameter(np.zeros(num_features, dtype=dtype), decay_eligible=False)
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)
        self._cache = None
        self._mode = "train"

    def extra_state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, mode="train", rng=None):
        self._mode = mode
        y, cache = ops.batch_norm(
            x, self.gamma.value, self.beta.value,
            self.running_mean, self.running_var,
            mode=mode, momentum=self.momentum, eps=self.eps,
        )
        self._cache = cache
        return y

    def backward(self, grad_out):
        if self._mode == "train":
            gx, dgamma, dbeta = ops.batch_norm_backward(grad_out, self._cache)
        else:
            gx = ops.batch_norm_eval_backward(grad_out, self.gamma.value,
                                              self.running_var, self.eps)
            dgamma = None
        if dgamma is not None:
            self.gamma.accumulate(dgamma)
            self.beta.accumulate(dbeta)
        return gx


class ReLU(Module):
    def __init__(self):
        self._x = None

    def forward(self, x, mode="train", rng=None):
        self._x = x
        return ops.relu(x)

    def backward(self, grad_out):
        return ops.relu_backward(grad_out, self._x)


class AvgPool2d(Module):
    def __init__(self, kernel, stride=None, padding=0, count_includes_pad=False):
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.count_includes_pad = count_includes_pad
        self._x_shape = None

    def forward(self, x, mode="train", rng=None):
        self._x_shape = x.shape
        return ops.avg_pool2d(x, self.kernel, self.stride, self.padding,
                              self.count_includes_pad)

    def backward(self, grad_out):
        return ops.avg_pool2d_backward(grad_out, self._x_shape, self.kernel,
                                       self.stride, self.padding,
                                       self.count_includes_pad)


class MaxPool2d(Module):
    def __init__(self, kernel, stride=None, padding=0):
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self._x_shape = None
        self._idx = None

    def forward(self, x, mode="train", rng=None):
        self._x_shape = x.shape
        y, self._idx = ops.max_pool2d(x, self.kernel, self.stride, self.padding)
        return y

    def backward(self, grad_out):
        return ops.max_pool2d_backward(grad_out, self._idx, self._x_shape,
                                       self.kernel, self.stride, self.padding)


class GlobalAvgPool(Module):
    def __init__(self):
        self._x_shape = None

    def forward(self, x, mode="train", rng=None):
        self._x_shape = x.shape
        return ops.global_avg_pool(x)

    def backward(self, grad_out):
        return ops.global_avg_pool_backward(grad_out, self._x_shape)


class Dropout(Module):
    def __init__(self, p):
        if not 0.0 <= p < 1.0:
            raise ConfigurationError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self._mask = None

    def forward(self, x, mode="train", rng=None):
        y, self._mask = ops.dropout(x, self.p, rng, mode)
        return y

    def backward(self, grad_out):
        return ops.dropout_backward(grad_out, self._mask)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x, mode="train", rng=None):
        for layer in self.layers:
            x = layer.forward(x, mode=mode, rng=rng)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out
