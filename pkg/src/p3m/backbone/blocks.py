"""Interchangeable encoder basic blocks: residual CNN, shifted-window
attention, and parallel attention + convolution.

All blocks map (B, C, H, W) to (B, C, H, W); channel changes happen at stage
entry, never inside a block.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ShapeError


def auto_heads(dim: int) -> int:
    return max(1, dim // 32)


class ResNetBlock(nn.Module):
    """Two 3x3 convolutions, each followed by BN, with a residual add and a
    final ReLU."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(x + out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden_ratio: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * hidden_ratio)
        self.fc2 = nn.Linear(dim * hidden_ratio, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class WindowAttention(nn.Module):
    """Multi-head self attention over square windows with a learned relative
    position bias.

    The bias table is sized for `max_window`; smaller effective windows index
    a centered subset, so one module serves every input resolution.
    """

    def __init__(self, dim: int, max_window: int, num_heads: int):
        super().__init__()
        self.dim = dim
        self.max_window = max_window
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.rel_bias_table = nn.Parameter(
            torch.zeros((2 * max_window - 1) ** 2, num_heads)
        )
        self._index_cache: dict[int, torch.Tensor] = {}

    def _rel_index(self, window: int) -> torch.Tensor:
        cached = self._index_cache.get(window)
        if cached is not None:
            return cached
        coords = torch.stack(
            torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij")
        ).flatten(1)
        rel = coords[:, :, None] - coords[:, None, :] + self.max_window - 1
        index = rel[0] * (2 * self.max_window - 1) + rel[1]
        self._index_cache[window] = index
        return index

    def forward(
        self,
        x: torch.Tensor,
        window: int | None = None,
        attn_mask: torch.Tensor | None = None,
        return_weights: bool = False,
    ):
        # x: (num_windows * B, window * window, C)
        b, n, c = x.shape
        window = window if window is not None else self.max_window
        if window > self.max_window or n != window * window:
            raise ShapeError(f"got {n} tokens for window {window}")
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, c // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        bias = self.rel_bias_table[self._rel_index(window).reshape(-1)]
        attn = attn + bias.reshape(n, n, self.num_heads).permute(2, 0, 1)[None]
        if attn_mask is not None:
            nw = attn_mask.shape[0]
            attn = attn.view(b // nw, nw, self.num_heads, n, n) + attn_mask[None, :, None]
            attn = attn.view(b, self.num_heads, n, n)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        out = self.proj(out)
        if return_weights:
            return out, attn
        return out


def _window_partition(x: torch.Tensor, w: int) -> torch.Tensor:
    b, h, wdt, c = x.shape
    x = x.view(b, h // w, w, wdt // w, w, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, w * w, c)


def _window_merge(windows: torch.Tensor, w: int, h: int, wdt: int) -> torch.Tensor:
    b = windows.shape[0] // ((h // w) * (wdt // w))
    x = windows.view(b, h // w, wdt // w, w, w, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, wdt, -1)


def resolve_window(window: int, h: int, w: int) -> int:
    """Largest window <= the configured size that tiles an h x w feature map."""
    eff = min(window, h, w)
    while h % eff or w % eff:
        eff -= 1
    return eff


class SwinBlock(nn.Module):
    """Shifted-window MSA followed by a 2-layer GELU MLP, both pre-normed
    with residual connections. Even blocks in a stage use plain windows,
    odd blocks shift by half a window."""

    def __init__(self, dim: int, window: int, num_heads: int | None = None, shifted: bool = False):
        super().__init__()
        self.window = window
        self.shifted = shifted
        heads = num_heads or auto_heads(dim)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim)
        self._mask_cache: dict[tuple[int, int, int, int], torch.Tensor] = {}

    def _shift_mask(self, h: int, w: int, win: int, shift: int) -> torch.Tensor:
        key = (h, w, win, shift)
        cached = self._mask_cache.get(key)
        if cached is not None:
            return cached
        img = torch.zeros(1, h, w, 1)
        cnt = 0
        for rows in (slice(0, -win), slice(-win, -shift), slice(-shift, None)):
            for cols in (slice(0, -win), slice(-win, -shift), slice(-shift, None)):
                img[:, rows, cols, :] = cnt
                cnt += 1
        windows = _window_partition(img, win).squeeze(-1)
        mask = windows[:, None, :] - windows[:, :, None]
        mask = mask.masked_fill(mask != 0, -100.0).masked_fill(mask == 0, 0.0)
        self._mask_cache[key] = mask
        return mask

    def forward(self, x: torch.Tensor, window_override: int | None = None) -> torch.Tensor:
        b, c, h, w = x.shape
        win = window_override if window_override is not None else self.window
        if h % win or w % win:
            raise ShapeError(f"feature map {h}x{w} not divisible by window {win}")
        shift = win // 2 if self.shifted and win < min(h, w) else 0

        tokens = x.permute(0, 2, 3, 1)
        shortcut = tokens
        tokens = self.norm1(tokens)
        if shift:
            tokens = torch.roll(tokens, (-shift, -shift), dims=(1, 2))
            mask = self._shift_mask(h, w, win, shift).to(x.device)
        else:
            mask = None
        attn_out = self.attn(_window_partition(tokens, win), window=win, attn_mask=mask)
        tokens = _window_merge(attn_out, win, h, w)
        if shift:
            tokens = torch.roll(tokens, (shift, shift), dims=(1, 2))
        tokens = shortcut + tokens
        tokens = tokens + self.mlp(self.norm2(tokens))
        return tokens.permute(0, 3, 1, 2)


class PCM(nn.Module):
    """Local branch: two groups of conv + BN + SiLU, then conv + SiLU."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(channels)
        self.conv3 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.silu(self.bn1(self.conv1(x)))
        out = F.silu(self.bn2(self.conv2(out)))
        return F.silu(self.conv3(out))


class GlobalAttention(nn.Module):
    """Plain multi-head self attention over all spatial tokens."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, c // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)
        attn = ((q @ k.transpose(-2, -1)) * self.scale).softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        out = self.proj(out)
        if return_weights:
            return out, attn
        return out


class ViTAENCBlock(nn.Module):
    """Parallel long-range (MHSA) and locality (PCM) branches joined on the
    residual path, followed by a feed-forward network."""

    def __init__(self, dim: int, num_heads: int | None = None):
        super().__init__()
        heads = num_heads or auto_heads(dim)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = GlobalAttention(dim, heads)
        self.pcm = PCM(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        attn_out = self.attn(self.norm1(tokens))
        tokens = tokens + attn_out + self.pcm(x).flatten(2).transpose(1, 2)
        tokens = tokens + self.mlp(self.norm2(tokens))
        return tokens.transpose(1, 2).reshape(b, c, h, w)
