"""
Dense 5-d tensor kernels for the spectral-spatial network.

Activations and gradients are plain numpy arrays laid out as
(batch, channels, height, width, depth). Storage precision is float32; every
kernel also accepts float64 arrays end to end, which the gradient checks use.

Convolution is cross-correlation (no kernel flip). Average pooling counts
padded zeros in both the sum and the divisor. Kernels process the batch one
sample at a time so a sample's result never depends on what it is batched
with, and weight gradients are accumulated in sample order.
"""

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import (
    ChannelMismatchError,
    DimensionMismatchError,
    LabelRangeError,
    NumericError,
    ShapeError,
)

logger = logging.getLogger(__name__)

STORAGE_DTYPE = np.float32
SPATIAL_AXES = ("height", "width", "depth")

# (n, c, h, w, d)
Tensor5 = np.ndarray


def check_tensor5(x, name="tensor"):
    if not isinstance(x, np.ndarray) or x.ndim != 5:
        raise DimensionMismatchError(
            f"{name} must be a 5-d array (n, c, h, w, d), got shape {getattr(x, 'shape', None)}"
        )
    if min(x.shape) < 1:
        raise DimensionMismatchError(f"{name} has an empty axis: {x.shape}")
    return x


def ensure_finite(x, where):
    if not np.isfinite(x).all():
        logger.error(f"Non-finite values produced by {where}")
        raise NumericError(f"Non-finite values produced by {where}")
    return x


def _triple(value, name, minimum):
    if np.isscalar(value):
        value = (value,) * 3
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise ShapeError(f"{name} needs three entries (h, w, d), got {value}")
    for axis, v in zip(SPATIAL_AXES, value):
        if v < minimum:
            raise ShapeError(f"{name} along {axis} must be >= {minimum}, got {v}", axis=axis)
    return value


def out_dim(in_size, k, s, p, axis="depth"):
    """Output extent of a window of size k sliding with stride s over in_size + 2p."""
    if s < 1:
        raise ShapeError(f"stride along {axis} must be >= 1, got {s}", axis=axis)
    if in_size + 2 * p < k:
        raise ShapeError(
            f"{axis} axis of size {in_size} (padding {p}) is smaller than kernel extent {k}",
            axis=axis,
        )
    return (in_size + 2 * p - k) // s + 1


def output_dims(spatial, kernel, stride, padding):
    return tuple(
        out_dim(size, k, s, p, axis=axis)
        for size, k, s, p, axis in zip(spatial, kernel, stride, padding, SPATIAL_AXES)
    )


@dataclass
class Conv3dSpec:
    """Weights (out_channels, in_channels, kh, kw, kd), bias (out_channels,)."""

    weights: np.ndarray
    bias: np.ndarray
    stride: tuple = (1, 1, 1)
    padding: tuple = (0, 0, 0)

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 5:
            raise DimensionMismatchError(
                f"convolution weights must be (out, in, kh, kw, kd), got {self.weights.shape}"
            )
        if self.bias.shape != (self.weights.shape[0],):
            raise DimensionMismatchError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} kernels"
            )
        self.stride = _triple(self.stride, "stride", 1)
        self.padding = _triple(self.padding, "padding", 0)

    @classmethod
    def zeros(cls, out_channels, in_channels, kernel, stride=(1, 1, 1), padding=(0, 0, 0), dtype=STORAGE_DTYPE):
        kernel = _triple(kernel, "kernel", 1)
        return cls(
            weights=np.zeros((out_channels, in_channels) + kernel, dtype=dtype),
            bias=np.zeros(out_channels, dtype=dtype),
            stride=stride,
            padding=padding,
        )

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel(self):
        return tuple(self.weights.shape[2:])

    @property
    def fan_in(self):
        return int(np.prod(self.weights.shape[1:]))

    @property
    def parameter_count(self):
        return self.out_channels * (self.fan_in + 1)

    def astype(self, dtype):
        return Conv3dSpec(self.weights.astype(dtype), self.bias.astype(dtype), self.stride, self.padding)


@dataclass
class Pool3dSpec:
    kernel: tuple
    stride: tuple = (1, 1, 1)
    padding: tuple = (0, 0, 0)

    def __post_init__(self):
        self.kernel = _triple(self.kernel, "kernel", 1)
        self.stride = _triple(self.stride, "stride", 1)
        self.padding = _triple(self.padding, "padding", 0)
        for axis, k, p in zip(SPATIAL_AXES, self.kernel, self.padding):
            if p >= k:
                raise ShapeError(f"pool padding {p} must be smaller than kernel extent {k}", axis=axis)

    @property
    def volume(self):
        return int(np.prod(self.kernel))


@dataclass
class LinearSpec:
    """Weights (classes, features), bias (classes,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionMismatchError(
                f"linear layer needs weights (C, F) and bias (C,), got {self.weights.shape} and {self.bias.shape}"
            )

    @property
    def in_features(self):
        return self.weights.shape[1]

    @property
    def out_features(self):
        return self.weights.shape[0]

    @property
    def fan_in(self):
        return self.in_features

    @property
    def parameter_count(self):
        return self.weights.size + self.bias.size

    def astype(self, dtype):
        return LinearSpec(self.weights.astype(dtype), self.bias.astype(dtype))


def _pad(x, padding):
    if not any(padding):
        return x
    ph, pw, pd = padding
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw), (pd, pd)))


def _offset_slices(offset, stride, out):
    # slice of the padded input touched by kernel offset `offset` across all outputs
    return tuple(slice(o, o + s * n, s) for o, s, n in zip(offset, stride, out))


def _windows(x, kernel, stride, padding, out):
    win = sliding_window_view(_pad(x, padding), kernel, axis=(2, 3, 4))
    sh, sw, sd = stride
    oh, ow, od = out
    # (n, c, oh, ow, od, kh, kw, kd)
    return win[:, :, ::sh, ::sw, ::sd][:, :, :oh, :ow, :od]


def conv3d_forward(x, spec):
    check_tensor5(x, "convolution input")
    if x.shape[1] != spec.in_channels:
        raise ChannelMismatchError(
            f"input has {x.shape[1]} channels, convolution expects {spec.in_channels}"
        )
    out = output_dims(x.shape[2:], spec.kernel, spec.stride, spec.padding)
    win = _windows(x, spec.kernel, spec.stride, spec.padding, out)
    dtype = np.result_type(x.dtype, spec.weights.dtype)
    result = np.empty((x.shape[0], spec.out_channels) + out, dtype=dtype)
    bias = spec.bias.astype(dtype)[:, None, None, None]
    for i in range(x.shape[0]):
        acc = np.tensordot(win[i], spec.weights, axes=([0, 4, 5, 6], [1, 2, 3, 4]))
        result[i] = np.moveaxis(acc, -1, 0) + bias
    return ensure_finite(result, "conv3d_forward")


def conv3d_backward(x, spec, upstream, input_grad=True):
    """
    Gradients of sum(upstream * conv3d_forward(x, spec)).

    Returns (grad_x, grad_weights, grad_bias); grad_x is None when
    input_grad is False (the first layer never needs it).
    """
    check_tensor5(x, "convolution input")
    if x.shape[1] != spec.in_channels:
        raise ChannelMismatchError(
            f"input has {x.shape[1]} channels, convolution expects {spec.in_channels}"
        )
    out = output_dims(x.shape[2:], spec.kernel, spec.stride, spec.padding)
    expected = (x.shape[0], spec.out_channels) + out
    if upstream.shape != expected:
        raise DimensionMismatchError(f"upstream gradient {upstream.shape} != convolution output {expected}")

    win = _windows(x, spec.kernel, spec.stride, spec.padding, out)
    dtype = np.result_type(x.dtype, spec.weights.dtype, upstream.dtype)
    grad_w = np.zeros(spec.weights.shape, dtype=dtype)
    grad_b = np.zeros(spec.bias.shape, dtype=dtype)
    grad_x = np.empty(x.shape, dtype=dtype) if input_grad else None

    _, c, h, w, d = x.shape
    ph, pw, pd = spec.padding
    padded = (c, h + 2 * ph, w + 2 * pw, d + 2 * pd)
    for i in range(x.shape[0]):
        g = upstream[i]
        grad_b += g.sum(axis=(1, 2, 3))
        grad_w += np.tensordot(g, win[i], axes=([1, 2, 3], [1, 2, 3]))
        if not input_grad:
            continue
        # (oh, ow, od, c, kh, kw, kd)
        cols = np.tensordot(g, spec.weights, axes=([0], [0]))
        gxp = np.zeros(padded, dtype=dtype)
        for offset in np.ndindex(*spec.kernel):
            gxp[(slice(None),) + _offset_slices(offset, spec.stride, out)] += np.moveaxis(
                cols[(Ellipsis,) + offset], 3, 0
            )
        grad_x[i] = gxp[:, ph:ph + h, pw:pw + w, pd:pd + d]

    if grad_x is not None:
        ensure_finite(grad_x, "conv3d_backward")
    return grad_x, ensure_finite(grad_w, "conv3d_backward"), ensure_finite(grad_b, "conv3d_backward")


def avgpool3d_forward(x, spec):
    check_tensor5(x, "pooling input")
    out = output_dims(x.shape[2:], spec.kernel, spec.stride, spec.padding)
    xp = _pad(x, spec.padding)
    acc = np.zeros(x.shape[:2] + out, dtype=x.dtype)
    for offset in np.ndindex(*spec.kernel):
        acc += xp[(slice(None), slice(None)) + _offset_slices(offset, spec.stride, out)]
    return ensure_finite(acc / x.dtype.type(spec.volume), "avgpool3d_forward")


def avgpool3d_backward(x_dims, spec, upstream):
    x_dims = tuple(x_dims)
    if len(x_dims) != 5:
        raise DimensionMismatchError(f"pooling input dims must have 5 entries, got {x_dims}")
    out = output_dims(x_dims[2:], spec.kernel, spec.stride, spec.padding)
    expected = x_dims[:2] + out
    if upstream.shape != expected:
        raise DimensionMismatchError(f"upstream gradient {upstream.shape} != pooled output {expected}")

    ph, pw, pd = spec.padding
    n, c, h, w, d = x_dims
    share = upstream / upstream.dtype.type(spec.volume)
    gxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw, d + 2 * pd), dtype=upstream.dtype)
    for offset in np.ndindex(*spec.kernel):
        gxp[(slice(None), slice(None)) + _offset_slices(offset, spec.stride, out)] += share
    return ensure_finite(gxp[:, :, ph:ph + h, pw:pw + w, pd:pd + d], "avgpool3d_backward")


def relu(x):
    return np.maximum(x, x.dtype.type(0))


def relu_backward(x, upstream):
    if x.shape != upstream.shape:
        raise DimensionMismatchError(f"upstream gradient {upstream.shape} != activation {x.shape}")
    # subgradient at exactly zero is zero
    return np.where(x > 0, upstream, np.zeros_like(upstream))


def linear_forward(x, spec):
    """Logits for a (n, F) batch of flattened features, or a single (F,) vector."""
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != spec.in_features:
        raise DimensionMismatchError(f"features of length {x.shape[-1]}, layer expects {spec.in_features}")
    dtype = np.result_type(x.dtype, spec.weights.dtype)
    logits = np.empty((x.shape[0], spec.out_features), dtype=dtype)
    for i in range(x.shape[0]):
        logits[i] = spec.weights @ x[i] + spec.bias
    ensure_finite(logits, "linear_forward")
    return logits[0] if single else logits


def linear_backward(x, spec, upstream):
    single = x.ndim == 1
    x = np.atleast_2d(x)
    upstream = np.atleast_2d(upstream)
    if x.shape[1] != spec.in_features:
        raise DimensionMismatchError(f"features of length {x.shape[1]}, layer expects {spec.in_features}")
    if upstream.shape != (x.shape[0], spec.out_features):
        raise DimensionMismatchError(
            f"upstream gradient {upstream.shape} != logits {(x.shape[0], spec.out_features)}"
        )
    dtype = np.result_type(x.dtype, spec.weights.dtype, upstream.dtype)
    grad_x = np.empty(x.shape, dtype=dtype)
    grad_w = np.zeros(spec.weights.shape, dtype=dtype)
    grad_b = np.zeros(spec.bias.shape, dtype=dtype)
    for i in range(x.shape[0]):
        grad_x[i] = upstream[i] @ spec.weights
        grad_w += np.outer(upstream[i], x[i])
        grad_b += upstream[i]
    return (grad_x[0] if single else grad_x), grad_w, grad_b


def softmax_cross_entropy(logits, targets):
    """
    Per-sample loss -log softmax(logits)[target] and its gradient
    softmax(logits) - onehot(target). Accepts (n, C) with n targets or a
    single (C,) vector with one target.
    """
    single = np.ndim(logits) == 1
    logits = np.atleast_2d(logits)
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n, num_classes = logits.shape
    if targets.shape != (n,):
        raise DimensionMismatchError(f"{targets.shape[0]} targets for {n} logit rows")
    if (targets < 0).any() or (targets >= num_classes).any():
        raise LabelRangeError(f"targets must lie in [0, {num_classes}), got {targets.min()}..{targets.max()}")

    rows = np.arange(n)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sums = exp.sum(axis=1, keepdims=True)
    losses = np.log(sums[:, 0]) - shifted[rows, targets]
    grad = exp / sums
    grad[rows, targets] -= 1
    if single:
        return losses[0], grad[0]
    return losses, grad
