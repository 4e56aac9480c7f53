"""Fundamental raster types, resampling, masking and compositing.

Array conventions used throughout the toolkit:

- ``ImageRGB``:   float32 array of shape (H, W, 3), values in [0, 1]
- ``AlphaMatte``: float32 array of shape (H, W), values in [0, 1]
- ``BinaryMask``: uint8 array of shape (H, W), values in {0, 1}
- ``Trimap``:     uint8 array of shape (H, W), labels {BG=0, TRANSITION=1, FG=2}
- ``FeatureMap``: float32 array of shape (C, H, W)

All functions are pure: they never mutate their inputs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, InvalidRatioError, NotFoundError, ShapeError

TRIMAP_BG = 0
TRIMAP_TRANSITION = 1
TRIMAP_FG = 2


@dataclass(frozen=True)
class Point2D:
    """A sub-pixel location in (row, col) order."""

    row: float
    col: float


def as_image(arr: np.ndarray) -> np.ndarray:
    """Validate and normalize an (H, W, 3) image in [0, 1]."""
    a = np.asarray(arr, dtype=np.float32)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError("image must have positive height and width")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ShapeError("image values must lie in [0, 1]")
    return a


def as_alpha(arr: np.ndarray) -> np.ndarray:
    """Validate and normalize an (H, W) alpha matte in [0, 1]."""
    a = np.asarray(arr, dtype=np.float32)
    if a.ndim != 2:
        raise ShapeError(f"expected (H, W) alpha, got shape {a.shape}")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ShapeError("alpha values must lie in [0, 1]")
    return a


def as_mask(arr: np.ndarray) -> np.ndarray:
    """Validate and normalize an (H, W) binary mask with values in {0, 1}."""
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ShapeError(f"expected (H, W) mask, got shape {a.shape}")
    u = np.unique(a)
    if not np.all(np.isin(u, (0, 1))):
        raise ShapeError("mask must be binary-valued")
    return a.astype(np.uint8)


def load_raster(path: str | Path, kind: str) -> np.ndarray:
    """Load an 8-bit raster from disk, scaled to [0, 1].

    kind: "image" -> (H, W, 3) float32; "alpha" -> (H, W) float32;
    "mask" -> (H, W) uint8, thresholded at 0.5.
    """
    p = Path(path)
    if not p.is_file():
        raise NotFoundError(f"no such raster file: {p}")
    try:
        with Image.open(p) as im:
            if kind == "image":
                arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            elif kind in ("alpha", "mask"):
                arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
            else:
                raise ValueError(f"unknown raster kind: {kind!r}")
    except UnidentifiedImageError as exc:
        raise FormatError(f"cannot decode {p} as an 8-bit raster") from exc
    if kind == "mask":
        return (arr >= 0.5).astype(np.uint8)
    return arr


def save_raster(path: str | Path, arr: np.ndarray, kind: str) -> None:
    """Write a raster as an 8-bit file, atomically (temp + rename).

    Images are written as RGB; alpha and masks as single-channel. Values are
    rounded to the nearest 8-bit level so load/save round-trips are bit-exact
    for lossless formats (PNG).
    """
    p = Path(path)
    if kind == "image":
        data = np.clip(np.rint(as_image(arr) * 255.0), 0, 255).astype(np.uint8)
        im = Image.fromarray(data, mode="RGB")
    elif kind == "alpha":
        data = np.clip(np.rint(as_alpha(arr) * 255.0), 0, 255).astype(np.uint8)
        im = Image.fromarray(data, mode="L")
    elif kind == "mask":
        data = (as_mask(arr) * 255).astype(np.uint8)
        im = Image.fromarray(data, mode="L")
    else:
        raise ValueError(f"unknown raster kind: {kind!r}")
    tmp = p.with_name(p.name + ".tmp")
    im.save(tmp, format=Image.registered_extensions().get(p.suffix.lower(), "PNG"))
    os.replace(tmp, p)


def _bilinear_axis(in_size: int, out_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Half-pixel-center convention (align-corners=false).
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, in_size - 1)
    w = (src - i0).astype(np.float32)
    return i0, i1, w


def _nearest_axis(in_size: int, out_size: int) -> np.ndarray:
    scale = in_size / out_size
    idx = np.floor((np.arange(out_size, dtype=np.float64) + 0.5) * scale).astype(np.int64)
    return np.minimum(idx, in_size - 1)


def _resample_plane(plane: np.ndarray, out_h: int, out_w: int, mode: str) -> np.ndarray:
    in_h, in_w = plane.shape
    if mode == "nearest":
        ri = _nearest_axis(in_h, out_h)
        ci = _nearest_axis(in_w, out_w)
        return plane[np.ix_(ri, ci)]
    if mode == "bilinear":
        r0, r1, wr = _bilinear_axis(in_h, out_h)
        c0, c1, wc = _bilinear_axis(in_w, out_w)
        p = plane.astype(np.float32)
        top = p[np.ix_(r0, c0)] * (1 - wc) + p[np.ix_(r0, c1)] * wc
        bot = p[np.ix_(r1, c0)] * (1 - wc) + p[np.ix_(r1, c1)] * wc
        return top * (1 - wr[:, None]) + bot * wr[:, None]
    if mode == "maxpool":
        if in_h % out_h or in_w % out_w:
            raise InvalidRatioError(
                f"maxpool needs integer ratios, got {in_h}x{in_w} -> {out_h}x{out_w}"
            )
        rh, rw = in_h // out_h, in_w // out_w
        return plane.reshape(out_h, rh, out_w, rw).max(axis=(1, 3))
    raise ValueError(f"unknown resample mode: {mode!r}")


def resample(arr: np.ndarray, out_h: int, out_w: int, mode: str) -> np.ndarray:
    """Resample a (H, W) map or (C, H, W) feature stack to a new size.

    Bilinear uses the half-pixel-center (align-corners=false) convention;
    nearest picks existing samples so the value set is preserved; maxpool
    requires integer downsampling ratios and returns per-window maxima.
    """
    if out_h < 1 or out_w < 1:
        raise ShapeError("output size must be at least 1x1")
    a = np.asarray(arr)
    if a.ndim == 2:
        out = _resample_plane(a, out_h, out_w, mode)
    elif a.ndim == 3:
        out = np.stack([_resample_plane(a[c], out_h, out_w, mode) for c in range(a.shape[0])])
    else:
        raise ShapeError(f"resample expects rank 2 or 3, got shape {a.shape}")
    if mode in ("nearest", "maxpool"):
        return out.astype(a.dtype, copy=False)
    return out.astype(np.float32, copy=False)


def composite(fg: np.ndarray, bg: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Blend foreground over background: out = alpha * fg + (1 - alpha) * bg."""
    f = as_image(fg)
    b = as_image(bg)
    a = as_alpha(alpha)
    if f.shape != b.shape or f.shape[:2] != a.shape:
        raise ShapeError(
            f"composite shapes disagree: fg {f.shape}, bg {b.shape}, alpha {a.shape}"
        )
    a3 = a[:, :, None]
    return (a3 * f + (1.0 - a3) * b).astype(np.float32)


def mask_apply(data: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero out values where mask == 0; keep values where mask == 1.

    Accepts (H, W), (C, H, W) feature stacks, or (H, W, 3) images; the mask
    broadcasts over the channel axis.
    """
    m = as_mask(mask)
    d = np.asarray(data)
    if d.ndim == 2:
        if d.shape != m.shape:
            raise ShapeError(f"mask {m.shape} does not match data {d.shape}")
        return d * m.astype(d.dtype)
    if d.ndim == 3 and d.shape[:2] == m.shape and d.shape[2] == 3:
        return d * m[:, :, None].astype(d.dtype)
    if d.ndim == 3 and d.shape[1:] == m.shape:
        return d * m[None, :, :].astype(d.dtype)
    raise ShapeError(f"mask {m.shape} does not match data {d.shape}")
