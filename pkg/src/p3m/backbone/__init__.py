from .blocks import ResNetBlock, SwinBlock, ViTAENCBlock, WindowAttention
from .encoder import (
    Encoder,
    EncoderConfig,
    EncoderOutput,
    EncoderTrace,
    VARIANT_RESNET34,
    VARIANT_SWIN_T,
    VARIANT_VITAE_S,
    build_encoder,
    forward_encoder,
    image_to_tensor,
)

__all__ = [
    "Encoder",
    "EncoderConfig",
    "EncoderOutput",
    "EncoderTrace",
    "ResNetBlock",
    "SwinBlock",
    "ViTAENCBlock",
    "WindowAttention",
    "VARIANT_RESNET34",
    "VARIANT_SWIN_T",
    "VARIANT_VITAE_S",
    "build_encoder",
    "forward_encoder",
    "image_to_tensor",
]
