"""Multi-task matting head: segmentation and matting decoders with the
tripartite and bipartite feature-integration modules, plus collaborative
fusion of the two task outputs.

Both decoders have five blocks of three 3x3 convolutions each. The
segmentation decoder upsamples bilinearly; the matting decoder uses max
unpooling with the encoder's pooling indices. Decoder block inputs mirror
the encoder stage widths reversed, so at each level the decoder feature,
the same-level feature of the other decoder, and the encoder skip tap all
share a channel count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .backbone import Encoder, EncoderConfig, EncoderOutput, image_to_tensor
from .backbone.encoder import init_weights
from .core import TRIMAP_BG, TRIMAP_FG
from .errors import ShapeError, StateError


@dataclass(frozen=True)
class P3MNetConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    use_tfi: bool = True
    use_sbfi: bool = True
    use_dbfi: bool = True
    decoder_channels: tuple[int, int, int, int, int] | None = None

    def resolved_decoder_channels(self) -> tuple[int, ...]:
        """Input widths of the five decoder blocks (encoder widths reversed)."""
        if self.decoder_channels is not None:
            return self.decoder_channels
        chans = self.encoder.scaled_channels()
        return tuple(reversed(chans))


@dataclass
class NetworkOutput:
    seg_logits: torch.Tensor  # (B, 3, H, W)
    detail_alpha: torch.Tensor  # (B, 1, H, W) in [0, 1]
    fused_alpha: torch.Tensor  # (B, 1, H, W) in [0, 1]


def conv_bn_relu(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class DecoderBlock(nn.Module):
    """Three 3x3 conv + BN + ReLU layers; the first changes the width."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.convs = nn.Sequential(conv_bn_relu(cin, cout), conv_bn_relu(cout, cout), conv_bn_relu(cout, cout))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.convs(x)


class ProjectConcatFuse(nn.Module):
    """Shared machinery of the integration modules: 1x1 projections halving
    each leg to out_channels/2, concatenation, then a 3x3 conv + BN + ReLU
    fuse block back to out_channels."""

    def __init__(self, leg_channels: tuple[int, ...], out_channels: int):
        super().__init__()
        half = out_channels // 2
        self.projections = nn.ModuleList(nn.Conv2d(c, half, 1) for c in leg_channels)
        self.fuse = nn.Sequential(
            nn.Conv2d(half * len(leg_channels), out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )

    def zero_fuse_(self) -> None:
        """Zero the fuse block so residual integration modules become exact
        identities (used by tests and ablation probes)."""
        nn.init.zeros_(self.fuse[0].weight)
        nn.init.zeros_(self.fuse[1].weight)
        nn.init.zeros_(self.fuse[1].bias)
        self.fuse[1].running_mean.zero_()
        self.fuse[1].running_var.fill_(1.0)

    def forward(self, legs: list[torch.Tensor]) -> torch.Tensor:
        if len(legs) != len(self.projections):
            raise ShapeError(f"expected {len(self.projections)} legs, got {len(legs)}")
        hw = legs[0].shape[-2:]
        for leg in legs[1:]:
            if leg.shape[-2:] != hw:
                raise ShapeError(f"leg sizes disagree: {[tuple(l.shape) for l in legs]}")
        return self.fuse(torch.cat([p(leg) for p, leg in zip(self.projections, legs)], dim=1))


class TFIModule(nn.Module):
    """Tripartite integration: embed the matting, segmentation, and encoder
    features at one level and fuse them into a new matting feature."""

    def __init__(self, channels: int):
        super().__init__()
        self.pcf = ProjectConcatFuse((channels, channels, channels), channels)

    def forward(self, f_m: torch.Tensor, f_s: torch.Tensor, f_e: torch.Tensor) -> torch.Tensor:
        if not f_m.shape == f_s.shape == f_e.shape:
            raise ShapeError(
                f"TFI inputs must share shape: {tuple(f_m.shape)}, {tuple(f_s.shape)}, {tuple(f_e.shape)}"
            )
        return self.pcf([f_m, f_s, f_e])


class SBFIModule(nn.Module):
    """Shallow bipartite integration: refine a matting feature with the
    max-pooled full-resolution encoder feature, residually."""

    def __init__(self, e0_channels: int, channels: int, ratio: int):
        super().__init__()
        self.ratio = ratio
        self.pcf = ProjectConcatFuse((e0_channels, channels), channels)

    def forward(self, f_m: torch.Tensor, e0: torch.Tensor) -> torch.Tensor:
        if e0.shape[-2] % self.ratio or e0.shape[-1] % self.ratio:
            raise ShapeError(f"e0 size {tuple(e0.shape[-2:])} not divisible by ratio {self.ratio}")
        pooled = F.max_pool2d(e0, self.ratio)
        if pooled.shape[-2:] != f_m.shape[-2:]:
            raise ShapeError(f"pooled e0 {tuple(pooled.shape)} vs f_m {tuple(f_m.shape)}")
        return self.pcf([pooled, f_m]) + f_m


class DBFIModule(nn.Module):
    """Deep bipartite integration: refine a segmentation feature with the
    bilinearly upsampled deepest encoder feature, residually."""

    def __init__(self, e4_channels: int, channels: int, ratio: int):
        super().__init__()
        self.ratio = ratio  # upsampling factor 32 / r
        self.pcf = ProjectConcatFuse((e4_channels, channels), channels)

    def forward(self, f_s: torch.Tensor, e4: torch.Tensor) -> torch.Tensor:
        up = F.interpolate(e4, size=f_s.shape[-2:], mode="bilinear", align_corners=False)
        expected = (e4.shape[-2] * self.ratio, e4.shape[-1] * self.ratio)
        if tuple(f_s.shape[-2:]) != expected:
            raise ShapeError(f"f_s {tuple(f_s.shape[-2:])} incompatible with UP ratio {self.ratio}")
        return self.pcf([up, f_s]) + f_s


class SegmentationDecoder(nn.Module):
    """Five blocks with bilinear 2x upsampling; deep integration at levels
    3, 2, 1 when enabled; 3-channel logits head at input resolution."""

    def __init__(self, cfg: P3MNetConfig):
        super().__init__()
        chans = cfg.resolved_decoder_channels()
        e4_ch = cfg.encoder.scaled_channels()[-1]
        outs = (*chans[1:], chans[-1])
        self.blocks = nn.ModuleList(DecoderBlock(cin, cout) for cin, cout in zip(chans, outs))
        self.use_dbfi = cfg.use_dbfi
        if cfg.use_dbfi:
            # block j in {1, 2, 3} produces the level i = 4 - j feature
            self.dbfi = nn.ModuleDict(
                {str(4 - j): DBFIModule(e4_ch, outs[j], 32 // 2 ** (4 - j)) for j in (1, 2, 3)}
            )
        self.head = nn.Conv2d(outs[-1], 3, 3, padding=1)

    def forward(self, enc: EncoderOutput) -> tuple[torch.Tensor, dict[int, torch.Tensor]]:
        feats: dict[int, torch.Tensor] = {}
        x = enc.e4
        for j, block in enumerate(self.blocks):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = block(x)
            level = 4 - j
            if self.use_dbfi and 1 <= level <= 3:
                x = self.dbfi[str(level)](x, enc.e4)
            if 1 <= level <= 4:
                feats[level] = x
        return self.head(x), feats


class MattingDecoder(nn.Module):
    """Five blocks with max-unpool upsampling driven by encoder indices;
    tripartite integration at levels 4..1 and shallow integration at 3..1
    when enabled; 1-channel detail head clamped to [0, 1]."""

    def __init__(self, cfg: P3MNetConfig):
        super().__init__()
        chans = cfg.resolved_decoder_channels()
        scaled = cfg.encoder.scaled_channels()
        outs = (*chans[1:], chans[-1])
        self.blocks = nn.ModuleList(DecoderBlock(cin, cout) for cin, cout in zip(chans, outs))
        self.use_tfi = cfg.use_tfi
        self.use_sbfi = cfg.use_sbfi
        if cfg.use_tfi:
            self.tfi = nn.ModuleDict({str(4 - j): TFIModule(outs[j]) for j in (0, 1, 2, 3)})
        if cfg.use_sbfi:
            self.sbfi = nn.ModuleDict(
                {str(4 - j): SBFIModule(scaled[0], outs[j], 2 ** (4 - j)) for j in (1, 2, 3)}
            )
        self.head = nn.Conv2d(outs[-1], 1, 3, padding=1)

    def forward(self, enc: EncoderOutput, seg_feats: dict[int, torch.Tensor]) -> torch.Tensor:
        if not enc.pool_indices:
            raise StateError("matting decoder needs encoder pooling indices")
        x = enc.e4
        for j, block in enumerate(self.blocks):
            idx = enc.pool_indices[4 - j]
            size = enc.pool_sizes[4 - j] if enc.pool_sizes else None
            x = F.max_unpool2d(x, idx, kernel_size=2, stride=2, output_size=size)
            x = block(x)
            level = 4 - j
            if self.use_tfi and 1 <= level <= 4:
                x = self.tfi[str(level)](x, seg_feats[level], enc.tap(level))
            if self.use_sbfi and 1 <= level <= 3:
                x = self.sbfi[str(level)](x, enc.e0)
        return torch.clamp(self.head(x), 0.0, 1.0)


def collaborative_fusion(seg_logits: torch.Tensor, detail_alpha: torch.Tensor) -> torch.Tensor:
    """Compose the final alpha from the segmentation argmax: foreground
    pixels become 1, background pixels 0, transition pixels take the matting
    decoder's detail value."""
    if seg_logits.shape[-2:] != detail_alpha.shape[-2:]:
        raise ShapeError(
            f"fusion resolution mismatch: {tuple(seg_logits.shape)} vs {tuple(detail_alpha.shape)}"
        )
    klass = seg_logits.argmax(dim=1, keepdim=True)
    fused = torch.where(klass == TRIMAP_FG, torch.ones_like(detail_alpha), detail_alpha)
    return torch.where(klass == TRIMAP_BG, torch.zeros_like(detail_alpha), fused)


class P3MNet(nn.Module):
    def __init__(self, cfg: P3MNetConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg.encoder)
        self.seg_decoder = SegmentationDecoder(cfg)
        self.mat_decoder = MattingDecoder(cfg)

    def decode(self, enc: EncoderOutput) -> NetworkOutput:
        seg_logits, seg_feats = self.seg_decoder(enc)
        detail = self.mat_decoder(enc, seg_feats)
        return NetworkOutput(seg_logits, detail, collaborative_fusion(seg_logits, detail))

    def forward(self, x: torch.Tensor) -> NetworkOutput:
        return self.decode(self.encoder(x))


def build_p3mnet(cfg: P3MNetConfig, rng_seed: int = 0) -> P3MNet:
    """Construct the network with deterministic initialization from the seed."""
    torch.manual_seed(rng_seed)
    model = P3MNet(cfg)
    model.apply(init_weights)
    # Start the detail head around mid-alpha so the clamp is unsaturated.
    nn.init.constant_(model.mat_decoder.head.bias, 0.5)
    return model


def infer_alpha(model: P3MNet, img: np.ndarray) -> np.ndarray:
    """Predict the fused alpha matte for one (H, W, 3) image in [0, 1]."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model(image_to_tensor(img))
    if was_training:
        model.train()
    return out.fused_alpha[0, 0].numpy().astype(np.float32)
