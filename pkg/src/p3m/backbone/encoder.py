"""The sharing encoder: a full-resolution stem plus five pooled stages of
interchangeable basic blocks.

Layout for an input of size H x W (channels shown at width multiplier 1):

    stem                 -> e0      64  @ H
    pool -> stage 1      -> tap e1  64  @ H/2
    pool -> stage 2      -> tap e2  64  @ H/4   (blocks then widen to 128)
    pool -> stage 3      -> tap e3  128 @ H/8   (blocks widen to 256)
    pool -> stage 4      -> tap e4_pre 256 @ H/16 (blocks widen to 512)
    pool -> extra stage  -> e4      512 @ H/32

The skip taps e1..e4_pre are taken right after each pooling, before the
stage widens its channels, so their widths match the decoder features they
are fused with. Downsampling is exclusively 2x2 max pooling; the argmax
indices of all five pools are recorded for the matting decoder's unpooling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError, ShapeError
from .blocks import ResNetBlock, SwinBlock, ViTAENCBlock, WindowAttention, resolve_window

VARIANT_RESNET34 = "resnet34"
VARIANT_SWIN_T = "swin_t"
VARIANT_VITAE_S = "vitae_s"

_DEPTHS = {
    VARIANT_RESNET34: (3, 4, 6, 3),
    VARIANT_SWIN_T: (2, 2, 6, 2),
    VARIANT_VITAE_S: (2, 2, 12, 2),
}


@dataclass(frozen=True)
class EncoderConfig:
    variant: str = VARIANT_RESNET34
    depths: tuple[int, int, int, int] = (3, 4, 6, 3)
    stage_channels: tuple[int, int, int, int, int] = (64, 64, 128, 256, 512)
    window_size: int = 8
    num_heads: int | None = None  # None derives per-stage heads from width
    scale: float = 1.0
    extra_depth: int = 2

    def __post_init__(self):
        if self.variant not in _DEPTHS:
            raise ConfigError(f"unknown encoder variant: {self.variant!r}")
        if len(self.depths) != 4 or any(d < 1 for d in self.depths):
            raise ConfigError(f"depths must be 4 positive counts, got {self.depths}")
        if len(self.stage_channels) != 5 or any(c < 1 for c in self.stage_channels):
            raise ConfigError(f"stage_channels must be 5 positive counts: {self.stage_channels}")
        if self.extra_depth < 1:
            raise ConfigError("extra_depth must be >= 1")
        if self.scale <= 0:
            raise ConfigError("scale must be positive")

    @classmethod
    def preset(cls, variant: str, scale: float = 1.0, **overrides) -> "EncoderConfig":
        window = overrides.pop("window_size", 8 if scale >= 1.0 else 4)
        return cls(
            variant=variant,
            depths=_DEPTHS[variant],
            window_size=window,
            scale=scale,
            **overrides,
        )

    def scaled_channels(self) -> tuple[int, ...]:
        return tuple(max(1, int(round(c * self.scale))) for c in self.stage_channels)


@dataclass
class EncoderOutput:
    """Features and pooling indices from one encoder pass (batched tensors)."""

    e0: torch.Tensor
    e1: torch.Tensor
    e2: torch.Tensor
    e3: torch.Tensor
    e4_pre: torch.Tensor
    e4: torch.Tensor
    pool_indices: list[torch.Tensor]
    pool_sizes: list[tuple[int, int]] = field(default_factory=list)

    def tap(self, i: int) -> torch.Tensor:
        """Encoder skip feature at downsample ratio 2**i, i in {1..4}."""
        return (self.e1, self.e2, self.e3, self.e4_pre)[i - 1]


@dataclass
class EncoderTrace:
    """Running state of a partially executed encoder (for feature-level CP)."""

    cur: torch.Tensor
    e0: torch.Tensor
    taps: list[torch.Tensor]
    indices: list[torch.Tensor]
    sizes: list[tuple[int, int]]
    next_stage: int


def _make_block(cfg: EncoderConfig, dim: int, index_in_stage: int) -> nn.Module:
    if cfg.variant == VARIANT_RESNET34:
        return ResNetBlock(dim)
    if cfg.variant == VARIANT_SWIN_T:
        return SwinBlock(dim, cfg.window_size, cfg.num_heads, shifted=index_in_stage % 2 == 1)
    return ViTAENCBlock(dim, cfg.num_heads)


class Encoder(nn.Module):
    NUM_STAGES = 5

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        c0, c1, c2, c3, c4 = cfg.scaled_channels()
        self.stem = nn.Sequential(
            nn.Conv2d(3, c0, 3, padding=1, bias=False),
            nn.BatchNorm2d(c0),
            nn.ReLU(inplace=True),
            nn.Conv2d(c0, c0, 3, padding=1, bias=False),
            nn.BatchNorm2d(c0),
            nn.ReLU(inplace=True),
        )
        widths_in = (c0, c1, c2, c3, c4)
        widths_out = (c1, c2, c3, c4, c4)
        depths = (*cfg.depths, cfg.extra_depth)
        self.pool = nn.MaxPool2d(2, stride=2, return_indices=True)
        self.entries = nn.ModuleList()
        self.stages = nn.ModuleList()
        for cin, cout, depth in zip(widths_in, widths_out, depths):
            if cin == cout:
                self.entries.append(nn.Identity())
            else:
                self.entries.append(
                    nn.Sequential(nn.Conv2d(cin, cout, 1, bias=False), nn.BatchNorm2d(cout))
                )
            self.stages.append(nn.ModuleList(_make_block(cfg, cout, j) for j in range(depth)))

    def _run_stage(self, k: int, trace: EncoderTrace) -> None:
        h, w = trace.cur.shape[-2:]
        if h % 2 or w % 2:
            raise ShapeError(f"stage {k + 1} input {h}x{w} is not divisible by 2")
        trace.sizes.append((h, w))
        cur, idx = self.pool(trace.cur)
        trace.indices.append(idx)
        if k < 4:
            trace.taps.append(cur)
        cur = self.entries[k](cur)
        if self.cfg.variant == VARIANT_SWIN_T:
            win = resolve_window(self.cfg.window_size, *cur.shape[-2:])
            for block in self.stages[k]:
                cur = block(cur, window_override=win)
        else:
            for block in self.stages[k]:
                cur = block(cur)
        trace.cur = cur
        trace.next_stage = k + 1

    def start(self, x: torch.Tensor) -> EncoderTrace:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"encoder expects (B, 3, H, W), got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise ShapeError(f"input {h}x{w} must be divisible by 32")
        e0 = self.stem(x)
        return EncoderTrace(cur=e0, e0=e0, taps=[], indices=[], sizes=[], next_stage=0)

    def finalize(self, trace: EncoderTrace) -> EncoderOutput:
        if trace.next_stage != self.NUM_STAGES:
            raise ShapeError("encoder trace is incomplete")
        return EncoderOutput(
            e0=trace.e0,
            e1=trace.taps[0],
            e2=trace.taps[1],
            e3=trace.taps[2],
            e4_pre=trace.taps[3],
            e4=trace.cur,
            pool_indices=trace.indices,
            pool_sizes=trace.sizes,
        )

    def forward(self, x: torch.Tensor) -> EncoderOutput:
        trace = self.start(x)
        for k in range(self.NUM_STAGES):
            self._run_stage(k, trace)
        return self.finalize(trace)

    def forward_partial(self, x: torch.Tensor, split_stage: int) -> EncoderTrace:
        """Run the stem and stages 1..split_stage, returning the trace."""
        if not 0 <= split_stage < self.NUM_STAGES:
            raise ConfigError(f"split stage must be in [0, {self.NUM_STAGES - 1}]")
        trace = self.start(x)
        for k in range(split_stage):
            self._run_stage(k, trace)
        return trace

    def resume(self, trace: EncoderTrace) -> EncoderOutput:
        for k in range(trace.next_stage, self.NUM_STAGES):
            self._run_stage(k, trace)
        return self.finalize(trace)


def init_weights(module: nn.Module) -> None:
    """Kaiming fan-in for convolutions, truncated normal (0.02) for
    attention/MLP weights, standard constants for norms."""
    if isinstance(module, nn.Conv2d):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, (nn.BatchNorm2d, nn.LayerNorm)):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)
    elif isinstance(module, WindowAttention):
        nn.init.trunc_normal_(module.rel_bias_table, std=0.02)


def build_encoder(cfg: EncoderConfig, rng_seed: int = 0) -> Encoder:
    """Construct an encoder with deterministic initialization from the seed."""
    torch.manual_seed(rng_seed)
    enc = Encoder(cfg)
    enc.apply(init_weights)
    return enc


def image_to_tensor(img: np.ndarray) -> torch.Tensor:
    """(H, W, 3) float image in [0, 1] -> (1, 3, H, W) float32 tensor."""
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]


def forward_encoder(enc: Encoder, img: np.ndarray | torch.Tensor) -> EncoderOutput:
    """Run the encoder on one image (numpy HWC in [0, 1]) or a batch tensor."""
    x = image_to_tensor(img) if isinstance(img, np.ndarray) else img
    return enc(x)
