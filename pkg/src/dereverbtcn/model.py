"""Dereverberation autoencoder: encoder, dilated-TCN mask estimator, decoder.

Also hosts the two closed-form oracles that the sweep harness leans on:
the receptive field in seconds and the parameter count with a
per-component breakdown.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import acoustics
from .autodiff import Tensor, crop, matmul, mul, no_grad, overlap_add, transpose
from .errors import ConfigError, InputError, ShapeError
from .layers import (
    ChannelwiseLayerNorm,
    Conv1d,
    DepthwiseSeparableConv,
    GlobalLayerNorm,
    PReLU,
    conv_block_core_params,
    glorot_uniform,
    relu,
)

__all__ = [
    "ModelConfig",
    "ConvBlock",
    "DereverbModel",
    "receptive_field",
    "count_parameters",
    "ParameterCount",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT_VERSION = 1

_NORM_CHOICES = ("gln", "cln", "none")


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters that determine architecture, receptive field and size.

    The conventional single-letter names are: block_len = L, enc_channels = N,
    bottleneck_channels = B, conv_channels = H, kernel_size = P,
    blocks_per_stack = X, repeats = R.
    """

    blocks_per_stack: int  # dilations 1, 2, ..., 2**(X-1) within one stack
    repeats: int  # how many times the dilated stack repeats
    block_len: int = 16  # analysis window in samples; hop is half of it
    enc_channels: int = 512
    bottleneck_channels: int = 128
    conv_channels: int = 512
    kernel_size: int = 3
    sample_rate: int = 8000
    residual: bool = True
    block_norm: str = "gln"  # gln | cln | none
    eps: float = 1e-8

    def __post_init__(self):
        positive = (
            self.blocks_per_stack,
            self.repeats,
            self.block_len,
            self.enc_channels,
            self.bottleneck_channels,
            self.conv_channels,
            self.kernel_size,
            self.sample_rate,
        )
        if min(positive) < 1:
            raise ConfigError("all model extents must be positive")
        if self.block_len % 2:
            raise ConfigError(f"block length must be even for 50% overlap, got {self.block_len}")
        if self.block_norm not in _NORM_CHOICES:
            raise ConfigError(f"block_norm must be one of {_NORM_CHOICES}, got {self.block_norm!r}")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")

    @property
    def hop(self) -> int:
        return self.block_len // 2

    def dilations(self) -> list[int]:
        """Dilation schedule of one full pass: X doublings repeated R times."""
        per_stack = [2**x for x in range(self.blocks_per_stack)]
        return per_stack * self.repeats

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def receptive_field(cfg: ModelConfig) -> float:
    """Receptive field of the mask network in seconds.

    One frame spans ``block_len / (2 * sample_rate)`` seconds (one hop);
    each dilated block widens the frame span by ``(kernel-1) * dilation``.
    """
    x, r, p = cfg.blocks_per_stack, cfg.repeats, cfg.kernel_size
    span = 1 + r * (p - 1) * sum(2 ** (x - i) for i in range(1, x + 1))
    return cfg.block_len / (2.0 * cfg.sample_rate) * span


def receptive_field_frames(cfg: ModelConfig) -> int:
    """Same receptive field measured in whole feature frames."""
    x, r, p = cfg.blocks_per_stack, cfg.repeats, cfg.kernel_size
    return 1 + r * (p - 1) * (2**x - 1)


@dataclass(frozen=True)
class ParameterCount:
    """Closed-form parameter accounting with a per-component breakdown."""

    encoder: int
    bottleneck_norm: int
    bottleneck_proj: int
    blocks: int
    mask_head: int
    decoder: int
    per_block: int
    per_block_core: int

    @property
    def total(self) -> int:
        return (
            self.encoder
            + self.bottleneck_norm
            + self.bottleneck_proj
            + self.blocks
            + self.mask_head
            + self.decoder
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d


def count_parameters(cfg: ModelConfig) -> ParameterCount:
    """Closed-form parameter count for a configuration.

    ``per_block_core`` is the bias-free identity
    ``B*H + H + H*P + H*B`` (133,120 at B=128, H=512, P=3); ``per_block``
    additionally counts the block's biases, activation slope and norm.
    """
    l, n = cfg.block_len, cfg.enc_channels
    b, h, p = cfg.bottleneck_channels, cfg.conv_channels, cfg.kernel_size
    norm_params = 0 if cfg.block_norm == "none" else 2 * h
    per_block = (b * h + h) + 1 + norm_params + (h * p + h) + (h * b + b)
    n_blocks = cfg.blocks_per_stack * cfg.repeats
    return ParameterCount(
        encoder=l * n,
        bottleneck_norm=2 * n,
        bottleneck_proj=n * b + b,
        blocks=n_blocks * per_block,
        mask_head=1 + (b * n + n),
        decoder=n * l,
        per_block=per_block,
        per_block_core=conv_block_core_params(b, h, p),
    )


def _make_norm(kind: str, channels: int, eps: float):
    if kind == "cln":
        return ChannelwiseLayerNorm(channels, eps)
    if kind == "gln":
        return GlobalLayerNorm(channels, eps)
    return None


class ConvBlock:
    """Pointwise expansion, PReLU, normalization, depthwise-separable conv.

    Optionally adds the block input back onto the output (residual path).
    """

    def __init__(self, cfg: ModelConfig, dilation: int, rng: np.random.Generator):
        b, h = cfg.bottleneck_channels, cfg.conv_channels
        self.dilation = dilation
        self.expand = Conv1d(b, h, 1, rng=rng)
        self.activation = PReLU()
        self.norm = _make_norm(cfg.block_norm, h, cfg.eps)
        self.separable = DepthwiseSeparableConv(h, b, cfg.kernel_size, dilation=dilation, rng=rng)
        self.residual = cfg.residual

    def __call__(self, x: Tensor) -> Tensor:
        y = self.expand(x)
        y = self.activation(y)
        if self.norm is not None:
            y = self.norm(y)
        y = self.separable(y)
        return x + y if self.residual else y

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = [
            ("expand.weight", self.expand.weight),
            ("expand.bias", self.expand.bias),
            ("activation.slope", self.activation.slope),
        ]
        if self.norm is not None:
            named += [("norm.gain", self.norm.gain), ("norm.bias", self.norm.bias)]
        named += [
            ("separable.depthwise.weight", self.separable.depthwise.weight),
            ("separable.depthwise.bias", self.separable.depthwise.bias),
            ("separable.pointwise.weight", self.separable.pointwise.weight),
            ("separable.pointwise.bias", self.separable.pointwise.bias),
        ]
        return named


class DereverbModel:
    """Mask-based dereverberation autoencoder over half-overlapping blocks."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        l, n = cfg.block_len, cfg.enc_channels
        b = cfg.bottleneck_channels
        self.encoder_weight = Tensor(glorot_uniform(rng, (l, n)), requires_grad=True)
        self.input_norm = ChannelwiseLayerNorm(n, cfg.eps)
        self.input_proj = Conv1d(n, b, 1, rng=rng)
        self.blocks = [ConvBlock(cfg, dilation, rng) for dilation in cfg.dilations()]
        self.mask_activation = PReLU()
        self.mask_proj = Conv1d(b, n, 1, rng=rng)
        self.decoder_weight = Tensor(glorot_uniform(rng, (n, l)), requires_grad=True)

    # --- stages -----------------------------------------------------------

    def encode(self, blocks: Tensor) -> Tensor:
        """Per-block features: rectified product with the analysis matrix."""
        if blocks.ndim != 2 or blocks.shape[1] != self.cfg.block_len:
            raise ShapeError(
                f"encode expects [frames, {self.cfg.block_len}], got {blocks.shape}"
            )
        return relu(matmul(blocks, self.encoder_weight))

    def estimate_mask(self, features: Tensor) -> Tensor:
        """Non-negative per-frame mask with the same [frames, N] shape."""
        if features.ndim != 2 or features.shape[1] != self.cfg.enc_channels:
            raise ShapeError(
                f"estimate_mask expects [frames, {self.cfg.enc_channels}], got {features.shape}"
            )
        y = transpose(features)  # [N, frames]
        y = self.input_norm(y)
        y = self.input_proj(y)
        for block in self.blocks:
            y = block(y)
        y = self.mask_activation(y)
        y = self.mask_proj(y)
        y = relu(y)
        return transpose(y)

    def decode(self, mask: Tensor, features: Tensor) -> Tensor:
        """Masked features through the synthesis matrix, then overlap-add."""
        if mask.shape != features.shape:
            raise ShapeError(f"mask shape {mask.shape} != features shape {features.shape}")
        blocks = matmul(mul(mask, features), self.decoder_weight)
        return overlap_add(blocks, self.cfg.hop)

    def forward(self, x) -> Tensor:
        """Full pass on a signal; output has exactly the input length."""
        if isinstance(x, acoustics.AudioClip):
            x = x.samples
        x = x if isinstance(x, Tensor) else Tensor(x)
        n = x.size
        if n < self.cfg.block_len:
            raise InputError(
                f"signal of {n} samples is shorter than one block ({self.cfg.block_len})"
            )
        blocks = acoustics.frame_blocks(x, self.cfg.block_len)
        features = self.encode(blocks)
        mask = self.estimate_mask(features)
        out = self.decode(mask, features)
        return crop(out, n) if out.size != n else out

    def enhance(self, clip: acoustics.AudioClip) -> acoustics.AudioClip:
        """Convenience wrapper: run forward without recording gradients."""
        with no_grad():
            estimate = self.forward(clip)
        return acoustics.AudioClip(estimate.data, clip.sample_rate, "estimate")

    # --- parameters and persistence ----------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = [
            ("encoder.weight", self.encoder_weight),
            ("input_norm.gain", self.input_norm.gain),
            ("input_norm.bias", self.input_norm.bias),
            ("input_proj.weight", self.input_proj.weight),
            ("input_proj.bias", self.input_proj.bias),
        ]
        for i, block in enumerate(self.blocks):
            named += [(f"block.{i}.{key}", t) for key, t in block.named_parameters()]
        named += [
            ("mask_activation.slope", self.mask_activation.slope),
            ("mask_proj.weight", self.mask_proj.weight),
            ("mask_proj.bias", self.mask_proj.bias),
            ("decoder.weight", self.decoder_weight),
        ]
        return named

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def save(self, path) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path) -> "DereverbModel":
        return load_checkpoint(path)


def save_checkpoint(model: DereverbModel, path) -> None:
    """Write config plus all parameter arrays to a versioned npz container."""
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.cfg.to_dict(),
    }
    arrays = {f"param/{name}": t.data for name, t in model.named_parameters()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=json.dumps(header, sort_keys=True), **arrays)


def load_checkpoint(path) -> DereverbModel:
    """Rebuild a model with bit-identical parameters from an npz checkpoint."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(
                f"unsupported checkpoint format version {meta.get('format_version')}"
            )
        cfg = ModelConfig.from_dict(meta["config"])
        model = DereverbModel(cfg, seed=0)
        for name, tensor in model.named_parameters():
            key = f"param/{name}"
            if key not in data:
                raise ConfigError(f"checkpoint is missing parameter {name!r}")
            stored = data[key]
            if stored.shape != tensor.data.shape:
                raise ConfigError(
                    f"checkpoint parameter {name!r} has shape {stored.shape}, "
                    f"expected {tensor.data.shape}"
                )
            tensor.data = stored.astype(np.float64)
    return model
