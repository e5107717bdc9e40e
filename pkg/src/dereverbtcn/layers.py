"""Differentiable layer set: 1-D convolutions, activations, normalization, Adam.

All layers operate on ``[channels, time]`` tensors (except the transposed
synthesis convolution, which emits a mono signal) and register their
gradient rules through :mod:`dereverbtcn.autodiff`, so every layer is
checkable against central finite differences.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, accumulate_grad, make_node, matmul, overlap_add, transpose
from .errors import ConfigError, NonFiniteError, ShapeError

__all__ = [
    "conv1d",
    "relu",
    "prelu",
    "channelwise_layer_norm",
    "global_layer_norm",
    "transposed_conv1d",
    "Conv1d",
    "DepthwiseSeparableConv",
    "PReLU",
    "ChannelwiseLayerNorm",
    "GlobalLayerNorm",
    "Adam",
    "conv_block_core_params",
]


def conv_output_length(t: int, kernel_size: int, stride: int, padding: int, dilation: int) -> int:
    return (t + 2 * padding - dilation * (kernel_size - 1) - 1) // stride + 1


def conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    *,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    groups: int = 1,
) -> Tensor:
    """Cross-correlate a ``[C_in, T]`` input with ``[C_out, C_in/groups, P]`` kernels.

    Zero padding on both sides, no kernel flip. Differentiable w.r.t. the
    input, the weights and the bias.
    """
    if x.ndim != 2:
        raise ShapeError(f"conv1d input must be [channels, time], got {x.shape}")
    if weight.ndim != 3:
        raise ShapeError(f"conv1d weight must be [out, in/groups, kernel], got {weight.shape}")
    c_in, t = x.shape
    c_out, cpg, kernel = weight.shape
    if groups < 1 or c_in % groups or c_out % groups:
        raise ShapeError(f"groups {groups} must divide in {c_in} and out {c_out} channels")
    if cpg != c_in // groups:
        raise ShapeError(f"weight expects {cpg} channels per group, input provides {c_in // groups}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} != ({c_out},)")
    t_out = conv_output_length(t, kernel, stride, padding, dilation)
    if t_out < 1:
        raise ShapeError(
            f"input of length {t} too short for kernel {kernel} with dilation {dilation}"
        )

    xp = np.pad(x.data, ((0, 0), (padding, padding))) if padding else x.data
    windows = np.empty((c_in, kernel, t_out))
    for k in range(kernel):
        start = k * dilation
        windows[:, k, :] = xp[:, start : start + stride * t_out : stride]

    w_g = weight.data.reshape(groups, c_out // groups, cpg, kernel)
    x_g = windows.reshape(groups, cpg, kernel, t_out)
    out = np.einsum("goip,gipt->got", w_g, x_g).reshape(c_out, t_out)
    if bias is not None:
        out = out + bias.data[:, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward_fn(g: np.ndarray) -> None:
        g_g = g.reshape(groups, c_out // groups, t_out)
        if weight.requires_grad:
            dw = np.einsum("got,gipt->goip", g_g, x_g).reshape(c_out, cpg, kernel)
            accumulate_grad(weight, dw)
        if bias is not None and bias.requires_grad:
            accumulate_grad(bias, g.sum(axis=1))
        if x.requires_grad:
            dwin = np.einsum("goip,got->gipt", w_g, g_g).reshape(c_in, kernel, t_out)
            dxp = np.zeros_like(xp)
            for k in range(kernel):
                start = k * dilation
                dxp[:, start : start + stride * t_out : stride] += dwin[:, k, :]
            accumulate_grad(x, dxp[:, padding : padding + t] if padding else dxp)

    return make_node(out, parents, backward_fn, "conv1d")


def relu(x: Tensor) -> Tensor:
    x_t = x if isinstance(x, Tensor) else Tensor(x)
    mask = x_t.data > 0

    def backward_fn(g: np.ndarray) -> None:
        accumulate_grad(x_t, g * mask)

    return make_node(np.maximum(x_t.data, 0.0), (x_t,), backward_fn, "relu")


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Leaky rectifier with one learnable slope shared across the layer.

    The subgradient at exactly zero follows the positive branch.
    """
    if slope.size != 1:
        raise ShapeError(f"prelu slope must be a single value, got shape {slope.shape}")
    pos = x.data >= 0
    a = float(slope.data.reshape(()))
    out = np.where(pos, x.data, a * x.data)

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            accumulate_grad(x, g * np.where(pos, 1.0, a))
        if slope.requires_grad:
            contribution = np.sum(g * np.where(pos, 0.0, x.data))
            accumulate_grad(slope, np.full(slope.shape, contribution))

    return make_node(out, (x, slope), backward_fn, "prelu")


def _layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float, per_timestep: bool, op: str) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"{op} input must be [channels, time], got {x.shape}")
    channels = x.shape[0]
    if gain.shape != (channels,) or bias.shape != (channels,):
        raise ShapeError(f"{op} gain/bias must have shape ({channels},)")
    axis = (0,) if per_timestep else (0, 1)
    with np.errstate(all="ignore"):
        mean = x.data.mean(axis=axis, keepdims=True)
        var = x.data.var(axis=axis, keepdims=True)
    if not (np.isfinite(mean).all() and np.isfinite(var).all()):
        # an overflowing variance would silently zero the output via 1/inf
        raise NonFiniteError(f"{op} statistics overflowed")
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean) * inv_std
    out = gain.data[:, None] * x_hat + bias.data[:, None]

    def backward_fn(g: np.ndarray) -> None:
        if gain.requires_grad:
            accumulate_grad(gain, np.sum(g * x_hat, axis=1))
        if bias.requires_grad:
            accumulate_grad(bias, np.sum(g, axis=1))
        if x.requires_grad:
            d_hat = g * gain.data[:, None]
            m1 = d_hat.mean(axis=axis, keepdims=True)
            m2 = (d_hat * x_hat).mean(axis=axis, keepdims=True)
            accumulate_grad(x, (d_hat - m1 - x_hat * m2) * inv_std)

    return make_node(out, (x, gain, bias), backward_fn, op)


def channelwise_layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize each time step across channels, then apply per-channel affine."""
    return _layer_norm(x, gain, bias, eps, per_timestep=True, op="cln")


def global_layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize with one mean/variance over all channels and time steps."""
    return _layer_norm(x, gain, bias, eps, per_timestep=False, op="gln")


def transposed_conv1d(x: Tensor, weight: Tensor, stride: int) -> Tensor:
    """Synthesize a mono signal from ``[N, L_x]`` features with 50% overlap-add.

    Each feature column contributes one kernel-length segment at offset
    ``l * stride``; overlapping contributions sum. ``stride`` must be half
    the kernel length, making this the exact adjoint of the corresponding
    framing + matmul analysis path.
    """
    if x.ndim != 2:
        raise ShapeError(f"transposed_conv1d input must be [channels, frames], got {x.shape}")
    if x.shape[1] < 1:
        raise ShapeError("transposed_conv1d needs at least one input frame")
    if weight.ndim != 2 or weight.shape[0] != x.shape[0]:
        raise ShapeError(
            f"weight must be [channels, kernel] with channels={x.shape[0]}, got {weight.shape}"
        )
    if stride * 2 != weight.shape[1]:
        raise ShapeError(f"stride {stride} must be half the kernel length {weight.shape[1]}")
    blocks = matmul(transpose(x), weight)
    return overlap_add(blocks, stride)


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


class Conv1d:
    """1-D convolution layer holding its weights, bias and geometry."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        *,
        stride: int = 1,
        padding: int = 0,
        dilation: int = 1,
        groups: int = 1,
        bias: bool = True,
        rng: np.random.Generator | None = None,
    ):
        if min(in_channels, out_channels, kernel_size, stride, dilation, groups) < 1:
            raise ConfigError("conv1d extents must be positive")
        if padding < 0:
            raise ConfigError("padding must be non-negative")
        if in_channels % groups or out_channels % groups:
            raise ConfigError(f"groups {groups} must divide channel counts")
        rng = rng or np.random.default_rng()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.dilation = dilation
        self.groups = groups
        fan_in = (in_channels // groups) * kernel_size
        self.weight = Tensor(
            he_normal(rng, (out_channels, in_channels // groups, kernel_size), fan_in),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    @property
    def depthwise(self) -> bool:
        return self.groups == self.in_channels

    @property
    def pointwise(self) -> bool:
        return self.kernel_size == 1 and self.dilation == 1

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(
            x,
            self.weight,
            self.bias,
            stride=self.stride,
            padding=self.padding,
            dilation=self.dilation,
            groups=self.groups,
        )

    def parameters(self) -> list[Tensor]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]


class DepthwiseSeparableConv:
    """Depthwise conv (one kernel per channel) followed by a pointwise projection.

    Padding is chosen so the time extent is preserved, which requires
    ``dilation * (kernel_size - 1)`` to be even.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        *,
        dilation: int = 1,
        rng: np.random.Generator | None = None,
    ):
        span = dilation * (kernel_size - 1)
        if span % 2:
            raise ConfigError(
                f"same-length padding needs dilation*(kernel-1) even, got {span}"
            )
        self.depthwise = Conv1d(
            in_channels,
            in_channels,
            kernel_size,
            dilation=dilation,
            padding=span // 2,
            groups=in_channels,
            rng=rng,
        )
        self.pointwise = Conv1d(in_channels, out_channels, 1, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.pointwise(self.depthwise(x))

    def parameters(self) -> list[Tensor]:
        return self.depthwise.parameters() + self.pointwise.parameters()


class PReLU:
    def __init__(self, initial_slope: float = 0.25):
        self.slope = Tensor(np.full((1,), initial_slope), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return prelu(x, self.slope)

    def parameters(self) -> list[Tensor]:
        return [self.slope]


class _Norm:
    def __init__(self, channels: int, eps: float = 1e-8):
        if eps <= 0:
            raise ConfigError("norm epsilon must be positive")
        self.gain = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)
        self.eps = eps

    def parameters(self) -> list[Tensor]:
        return [self.gain, self.bias]


class ChannelwiseLayerNorm(_Norm):
    def __call__(self, x: Tensor) -> Tensor:
        return channelwise_layer_norm(x, self.gain, self.bias, self.eps)


class GlobalLayerNorm(_Norm):
    def __call__(self, x: Tensor) -> Tensor:
        return global_layer_norm(x, self.gain, self.bias, self.eps)


class Adam:
    """Bias-corrected adaptive-moment optimizer (beta1=0.9, beta2=0.999)."""

    def __init__(
        self,
        params: list[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        """One update; parameters with no gradient are treated as zero-gradient."""
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1**self.t)
            v_hat = self.v[i] / (1.0 - self.beta2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def conv_block_core_params(bottleneck: int, hidden: int, kernel_size: int) -> int:
    """Closed-form weight count of one convolutional block, bias-free convs.

    Pointwise in (bottleneck*hidden) + per-channel terms (hidden) +
    depthwise kernel (hidden*kernel) + pointwise out (hidden*bottleneck).
    """
    return bottleneck * hidden + hidden + hidden * kernel_size + hidden * bottleneck
