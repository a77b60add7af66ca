"""Fixed-shape 1D layer kernels with forward, backward and FLOP accounting.

Activations are numpy arrays shaped ``(batch, length, channels)`` for the
sequence layers and ``(batch, features)`` for dense layers.  A single
unbatched ``(length, channels)`` / ``(features,)`` array is accepted by every
``forward`` and returned with the same rank.

Each layer exposes three entry points:

* ``forward(x)`` -- pure inference pass, never mutates the layer, so one
  layer instance can serve concurrent callers;
* ``forward_train(x)`` -- returns ``(output, cache)`` for backprop.  Only
  :class:`BatchNorm` mutates state here (running statistics);
* ``backward(cache, grad)`` -- returns ``(input_grad, {param: grad})``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

DEFAULT_LEAKY_ALPHA = 0.01
DEFAULT_BN_EPSILON = 1e-3
DEFAULT_BN_MOMENTUM = 0.01


@dataclass(frozen=True)
class FlopConvention:
    """Per-operation FLOP costs.

    The defaults count a multiply-accumulate as two FLOPs, a bias add as one,
    inference batch-norm as a folded scale+shift (two per element), leaky-ReLU
    as one per element, average pooling as ``kernel_size`` per output element
    and softmax as three per class.
    """

    mac: int = 2
    bias: int = 1
    batchnorm_per_element: int = 2
    leaky_relu_per_element: int = 1
    pool_per_window_element: int = 1
    softmax_per_class: int = 3


DEFAULT_CONVENTION = FlopConvention()


def _batched(x, rank):
    x = np.asarray(x)
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim != rank:
        raise ShapeError(f"expected a rank-{rank - 1} or rank-{rank} array, got shape {x.shape}")
    return x, False


def _unbatch(y, squeeze):
    return y[0] if squeeze else y


def _pooled_length(length, kernel_size, stride):
    return (length - kernel_size) // stride + 1


class Conv1d:
    """Valid-padding 1D convolution; weights are ``(out, in, kernel)``."""

    kind = "conv1d"

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, weight=None, bias=None):
        if min(in_channels, out_channels, kernel_size, stride) < 1:
            raise ValueError("conv1d dimensions must be positive")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.weight = (np.zeros((out_channels, in_channels, kernel_size))
                       if weight is None else np.asarray(weight, dtype=float))
        self.bias = np.zeros(out_channels) if bias is None else np.asarray(bias, dtype=float)
        if self.weight.shape != (out_channels, in_channels, kernel_size):
            raise ShapeError(f"conv1d weight shape {self.weight.shape} does not match "
                             f"({out_channels}, {in_channels}, {kernel_size})")

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    @property
    def param_count(self):
        return self.in_channels * self.kernel_size * self.out_channels + self.out_channels

    def output_shape(self, input_shape):
        length, channels = input_shape
        if channels != self.in_channels:
            raise ShapeError(f"conv1d expects {self.in_channels} input channels, got {channels}")
        if length < self.kernel_size:
            raise ShapeError(f"conv1d input length {length} is shorter than kernel {self.kernel_size}")
        return (_pooled_length(length, self.kernel_size, self.stride), self.out_channels)

    def _windows(self, x):
        self.output_shape(x.shape[1:])
        win = np.lib.stride_tricks.sliding_window_view(x, self.kernel_size, axis=1)
        # (n, L - k + 1, c, k) -> strided (n, L_out, k, c)
        return win[:, :: self.stride].transpose(0, 1, 3, 2)

    def forward(self, x):
        x, squeeze = _batched(x, 3)
        win = self._windows(x)
        y = np.einsum("nlkc,ock->nlo", win, self.weight, optimize=True) + self.bias
        return _unbatch(y, squeeze)

    def forward_train(self, x):
        x, _ = _batched(x, 3)
        win = self._windows(x)
        y = np.einsum("nlkc,ock->nlo", win, self.weight, optimize=True) + self.bias
        return y, (x.shape, win)

    def backward(self, cache, grad):
        x_shape, win = cache
        grad = np.asarray(grad)
        if grad.shape != win.shape[:2] + (self.out_channels,):
            raise ShapeError(f"conv1d upstream gradient shape {grad.shape} does not match output "
                             f"{win.shape[:2] + (self.out_channels,)}")
        d_weight = np.einsum("nlkc,nlo->ock", win, grad, optimize=True)
        d_bias = grad.sum(axis=(0, 1))
        d_win = np.einsum("nlo,ock->nlkc", grad, self.weight, optimize=True)
        dx = np.zeros(x_shape)
        n_out = win.shape[1]
        span = self.stride * (n_out - 1) + 1
        for k in range(self.kernel_size):
            dx[:, k:k + span:self.stride, :] += d_win[:, :, k, :]
        return dx, {"weight": d_weight, "bias": d_bias}

    def flops(self, input_shape, convention=DEFAULT_CONVENTION):
        length, channels = self.output_shape(input_shape)
        per_output = self.kernel_size * self.in_channels * convention.mac + convention.bias
        return length * channels * per_output


class AvgPool1d:
    kind = "avgpool1d"

    def __init__(self, kernel_size, stride):
        if kernel_size < 1 or stride < 1:
            raise ValueError("pool kernel and stride must be positive")
        self.kernel_size = kernel_size
        self.stride = stride

    def params(self):
        return {}

    param_count = 0

    def output_shape(self, input_shape):
        length, channels = input_shape
        if length < self.kernel_size:
            raise ShapeError(f"avgpool input length {length} is shorter than kernel {self.kernel_size}")
        return (_pooled_length(length, self.kernel_size, self.stride), channels)

    def _windows(self, x):
        self.output_shape(x.shape[1:])
        win = np.lib.stride_tricks.sliding_window_view(x, self.kernel_size, axis=1)
        return win[:, :: self.stride]

    def forward(self, x):
        x, squeeze = _batched(x, 3)
        return _unbatch(self._windows(x).mean(axis=-1), squeeze)

    def forward_train(self, x):
        x, _ = _batched(x, 3)
        return self._windows(x).mean(axis=-1), x.shape

    def backward(self, cache, grad):
        x_shape = cache
        n_out = _pooled_length(x_shape[1], self.kernel_size, self.stride)
        if grad.shape != (x_shape[0], n_out, x_shape[2]):
            raise ShapeError(f"avgpool upstream gradient shape {grad.shape} does not match output")
        dx = np.zeros(x_shape)
        span = self.stride * (n_out - 1) + 1
        share = grad / self.kernel_size
        for k in range(self.kernel_size):
            dx[:, k:k + span:self.stride, :] += share
        return dx, {}

    def flops(self, input_shape, convention=DEFAULT_CONVENTION):
        length, channels = self.output_shape(input_shape)
        return length * channels * self.kernel_size * convention.pool_per_window_element


class BatchNorm:
    """Per-channel batch normalization over the batch and time axes.

    ``momentum`` weights the newest batch in the running-average update:
    ``running = (1 - momentum) * running + momentum * batch``.
    """

    kind = "batchnorm"

    def __init__(self, channels, epsilon=DEFAULT_BN_EPSILON, momentum=DEFAULT_BN_MOMENTUM):
        if channels < 1:
            raise ValueError("batchnorm channels must be positive")
        if epsilon <= 0 or not 0 < momentum < 1:
            raise ValueError("batchnorm needs epsilon > 0 and 0 < momentum < 1")
        self.channels = channels
        self.epsilon = float(epsilon)
        self.momentum = float(momentum)
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    @property
    def param_count(self):
        # gamma, beta, running mean and running variance all count.
        return 4 * self.channels

    def output_shape(self, input_shape):
        if input_shape[-1] != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, got {input_shape[-1]}")
        return tuple(input_shape)

    def forward(self, x):
        x, squeeze = _batched(x, 3)
        self.output_shape(x.shape[1:])
        scale = self.gamma / np.sqrt(self.running_var + self.epsilon)
        return _unbatch((x - self.running_mean) * scale + self.beta, squeeze)

    def forward_train(self, x, update_stats=True):
        x, _ = _batched(x, 3)
        self.output_shape(x.shape[1:])
        mean = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        x_hat = (x - mean) * inv_std
        if update_stats:
            m = self.momentum
            self.running_mean *= 1.0 - m
            self.running_mean += m * mean
            self.running_var *= 1.0 - m
            self.running_var += m * var
        return self.gamma * x_hat + self.beta, (x_hat, inv_std)

    def backward(self, cache, grad):
        x_hat, inv_std = cache
        if grad.shape != x_hat.shape:
            raise ShapeError(f"batchnorm upstream gradient shape {grad.shape} != {x_hat.shape}")
        d_gamma = (grad * x_hat).sum(axis=(0, 1))
        d_beta = grad.sum(axis=(0, 1))
        g = grad * self.gamma
        dx = inv_std * (g - g.mean(axis=(0, 1)) - x_hat * (g * x_hat).mean(axis=(0, 1)))
        return dx, {"gamma": d_gamma, "beta": d_beta}

    def flops(self, input_shape, convention=DEFAULT_CONVENTION):
        length, channels = self.output_shape(input_shape)
        return length * channels * convention.batchnorm_per_element


class Dense:
    kind = "dense"

    def __init__(self, in_features, out_features, weight=None, bias=None):
        if in_features < 1 or out_features < 1:
            raise ValueError("dense dimensions must be positive")
        self.in_features = in_features
        self.out_features = out_features
        self.weight = (np.zeros((out_features, in_features))
                       if weight is None else np.asarray(weight, dtype=float))
        self.bias = np.zeros(out_features) if bias is None else np.asarray(bias, dtype=float)
        if self.weight.shape != (out_features, in_features):
            raise ShapeError(f"dense weight shape {self.weight.shape} does not match "
                             f"({out_features}, {in_features})")

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    @property
    def param_count(self):
        return (self.in_features + 1) * self.out_features

    def output_shape(self, input_shape):
        (features,) = input_shape
        if features != self.in_features:
            raise ShapeError(f"dense expects {self.in_features} input features, got {features}")
        return (self.out_features,)

    def forward(self, x):
        x, squeeze = _batched(x, 2)
        self.output_shape(x.shape[1:])
        return _unbatch(x @ self.weight.T + self.bias, squeeze)

    def forward_train(self, x):
        x, _ = _batched(x, 2)
        self.output_shape(x.shape[1:])
        return x @ self.weight.T + self.bias, x

    def backward(self, cache, grad):
        x = cache
        if grad.shape != (x.shape[0], self.out_features):
            raise ShapeError(f"dense upstream gradient shape {grad.shape} does not match output")
        return grad @ self.weight, {"weight": grad.T @ x, "bias": grad.sum(axis=0)}

    def flops(self, input_shape, convention=DEFAULT_CONVENTION):
        (out,) = self.output_shape(input_shape)
        return out * (self.in_features * convention.mac + convention.bias)


class Flatten:
    """Time-major flatten: all channels of step 0, then step 1, ..."""

    kind = "flatten"
    param_count = 0

    def params(self):
        return {}

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x):
        x, squeeze = _batched(x, 3)
        return _unbatch(x.reshape(x.shape[0], -1), squeeze)

    def forward_train(self, x):
        x, _ = _batched(x, 3)
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad):
        return grad.reshape(cache), {}

    def flops(self, input_shape, convention=DEFAULT_CONVENTION):
        return 0


class LeakyRelu:
    kind = "leaky_relu"
    param_count = 0

    def __init__(self, alpha=DEFAULT_LEAKY_ALPHA):
        if alpha <= 0:
            raise ValueError("leaky-relu alpha must be positive")
        self.alpha = float(alpha)

    def params(self):
        return {}

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, x, self.alpha * x)

    def forward_train(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, x, self.alpha * x), x >= 0

    def backward(self, cache, grad):
        return np.where(cache, grad, self.alpha * grad), {}

    def flops(self, input_shape, convention=DEFAULT_CONVENTION):
        return int(np.prod(input_shape)) * convention.leaky_relu_per_element


def softmax(logits):
    """Numerically stable softmax over the last axis."""
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Softmax:
    kind = "softmax"
    param_count = 0

    def params(self):
        return {}

    def output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ShapeError(f"softmax expects a flat vector, got shape {tuple(input_shape)}")
        return tuple(input_shape)

    def forward(self, x):
        return softmax(x)

    def forward_train(self, x):
        p = softmax(x)
        return p, p

    def backward(self, cache, grad):
        p = cache
        return p * (grad - (grad * p).sum(axis=-1, keepdims=True)), {}

    def flops(self, input_shape, convention=DEFAULT_CONVENTION):
        (n,) = self.output_shape(input_shape)
        return n * convention.softmax_per_class


def layer_flops(layer, input_shape, convention=DEFAULT_CONVENTION):
    return layer.flops(tuple(input_shape), convention)
