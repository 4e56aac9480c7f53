"""Copy-and-paste augmentation: transplant source faces into the blurred
face regions of training data, at image level (ICP) or feature level (FCP).

The copy step masks the source data with its facemask and applies a random
resize and rotation; the merge step aligns the face-mask centroids and
pastes the overlap of the transformed face mask with the target blur mask.
No learnable parameters are involved. All geometry works on channels-first
arrays; image-level callers adapt (H, W, 3) <-> (C, H, W).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import core
from .backbone import Encoder, EncoderTrace
from .errors import (
    ConfigError,
    EmptyFaceError,
    EmptyTargetMaskError,
    MissingAnnotationError,
    ShapeError,
)

MODE_ICP = "icp"
MODE_FCP = "fcp"


@dataclass(frozen=True)
class CPConfig:
    mode: str = MODE_ICP
    probability: float = 0.5
    rotation_range: float = 15.0  # degrees, drawn from [-range, +range]
    scale_range: tuple[float, float] = (0.75, 1.25)
    fcp_split_index: int = 1  # encoder stage after which features merge

    def __post_init__(self):
        if self.mode not in (MODE_ICP, MODE_FCP):
            raise ConfigError(f"unknown CP mode: {self.mode!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError("probability must lie in [0, 1]")
        if self.scale_range[0] <= 0 or self.scale_range[1] < self.scale_range[0]:
            raise ConfigError(f"bad scale range: {self.scale_range}")


@dataclass(frozen=True)
class SourceFaceRecord:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    facemask: np.ndarray  # (H, W) binary

    def __post_init__(self):
        if self.facemask.sum() == 0:
            raise EmptyFaceError("source record has an empty facemask")


class SourceLibrary:
    """Directory-backed source faces: images/*.png + facemasks/*.png."""

    def __init__(self, records: list[SourceFaceRecord]):
        if not records:
            raise ConfigError("source library is empty")
        self.records = records

    @classmethod
    def from_dir(cls, root: str | Path) -> "SourceLibrary":
        root = Path(root)
        records = []
        for img_path in sorted((root / "images").glob("*.png")):
            mask_path = root / "facemasks" / img_path.name
            records.append(
                SourceFaceRecord(
                    image=core.load_raster(img_path, "image"),
                    facemask=core.load_raster(mask_path, "mask"),
                )
            )
        return cls(records)

    def sample(self, rng: np.random.Generator) -> SourceFaceRecord:
        return self.records[int(rng.integers(0, len(self.records)))]


def source_facemask_from_parts(skin: np.ndarray, brow: np.ndarray) -> np.ndarray:
    """Face region from part annotations: skin pixels at or below the
    horizontal line through the topmost brow row."""
    s = core.as_mask(skin)
    b = core.as_mask(brow)
    if s.shape != b.shape:
        raise ShapeError(f"skin {s.shape} vs brow {b.shape}")
    brow_rows = np.nonzero(b)[0]
    if brow_rows.size == 0:
        raise MissingAnnotationError("brow mask is empty")
    top = int(brow_rows.min())
    out = s.copy()
    out[:top] = 0
    return out


def import_part_annotations(parts_dir: str | Path, out_dir: str | Path) -> tuple[int, int]:
    """Build a source library from per-identity part masks.

    Expects `<stem>.png` images with `<stem>_skin.png` / `<stem>_brow.png`
    companions. Writes `images/` and `facemasks/` under out_dir; identities
    whose derived facemask is empty are skipped. Returns (written, skipped).
    """
    parts = Path(parts_dir)
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "facemasks").mkdir(parents=True, exist_ok=True)
    written = skipped = 0
    for img_path in sorted(parts.glob("*.png")):
        if img_path.stem.endswith(("_skin", "_brow")):
            continue
        stem = img_path.stem
        try:
            facemask = source_facemask_from_parts(
                core.load_raster(parts / f"{stem}_skin.png", "mask"),
                core.load_raster(parts / f"{stem}_brow.png", "mask"),
            )
        except MissingAnnotationError:
            skipped += 1
            continue
        if facemask.sum() == 0:
            skipped += 1
            continue
        core.save_raster(out / "images" / f"{stem}.png", core.load_raster(img_path, "image"), "image")
        core.save_raster(out / "facemasks" / f"{stem}.png", facemask, "mask")
        written += 1
    return written, skipped


def center_of_mask(mask: np.ndarray) -> core.Point2D:
    """Centroid (mean row, mean col) of the set pixels."""
    m = core.as_mask(mask)
    rows, cols = np.nonzero(m)
    if rows.size == 0:
        raise EmptyFaceError("cannot take the center of an empty mask")
    return core.Point2D(float(rows.mean()), float(cols.mean()))


def _rotate_plane(plane: np.ndarray, angle_deg: float, mode: str) -> np.ndarray:
    """Rotate about the array center, same output size, zeros outside."""
    h, w = plane.shape
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rad = np.deg2rad(angle_deg)
    cos, sin = np.cos(rad), np.sin(rad)
    rr, cc_grid = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dr, dc = rr - cr, cc_grid - cc
    src_r = cr + cos * dr + sin * dc
    src_c = cc - sin * dr + cos * dc
    if mode == "nearest":
        ri = np.rint(src_r).astype(np.int64)
        ci = np.rint(src_c).astype(np.int64)
        valid = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        out = np.zeros_like(plane)
        out[valid] = plane[ri[valid], ci[valid]]
        return out
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr = (src_r - r0).astype(np.float32)
    fc = (src_c - c0).astype(np.float32)
    out = np.zeros(plane.shape, dtype=np.float32)
    for dr0, dc0, wgt in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        ri, ci = r0 + dr0, c0 + dc0
        valid = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        out[valid] += wgt[valid] * plane[ri[valid], ci[valid]].astype(np.float32)
    return out


def rotate(data: np.ndarray, angle_deg: float, mode: str) -> np.ndarray:
    if data.ndim == 2:
        return _rotate_plane(data, angle_deg, mode)
    return np.stack([_rotate_plane(p, angle_deg, mode) for p in data])


def resize_mask_to(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    """Nearest-resample a binary mask to the spatial size of some data."""
    m = core.as_mask(mask)
    if m.shape == (h, w):
        return m
    return core.resample(m, h, w, "nearest")


def copy_augment(
    d_s: np.ndarray, m_s: np.ndarray, rng: np.random.Generator, cfg: CPConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Cut the masked face out of the source data and randomly resize and
    rotate it (bilinear for data, nearest for the mask). The mask must
    already match the source's spatial size.

    Draw order: scale first, then angle.
    """
    if d_s.ndim != 3:
        raise ShapeError(f"expected (C, H, W) source data, got {d_s.shape}")
    m = core.as_mask(m_s)
    if m.shape != d_s.shape[1:]:
        raise ShapeError(f"mask {m.shape} does not match source {d_s.shape}")
    if m.sum() == 0:
        raise EmptyFaceError("source facemask is empty")
    face = core.mask_apply(d_s, m)

    scale = float(rng.uniform(*cfg.scale_range))
    angle = float(rng.uniform(-cfg.rotation_range, cfg.rotation_range))
    if scale != 1.0:
        h = max(1, int(round(face.shape[1] * scale)))
        w = max(1, int(round(face.shape[2] * scale)))
        face = core.resample(face, h, w, "bilinear")
        m = core.resample(m, h, w, "nearest")
    if angle != 0.0:
        face = rotate(face, angle, "bilinear")
        m = rotate(m, angle, "nearest")
    if m.sum() == 0:
        raise EmptyFaceError("facemask vanished during augmentation")
    return face, m


def paste_plan(
    face_mask: np.ndarray, m_t: np.ndarray
) -> tuple[tuple[int, int], np.ndarray]:
    """Translation (dr, dc) aligning the face centroid onto the target blur
    centroid, and the in-bounds paste region (translated mask AND m_t)."""
    t = core.as_mask(m_t)
    if t.sum() == 0:
        raise EmptyTargetMaskError("target blur mask is empty")
    p_s = center_of_mask(face_mask)
    p_t = center_of_mask(t)
    dr = int(round(p_t.row - p_s.row))
    dc = int(round(p_t.col - p_s.col))
    placed = np.zeros_like(t)
    _copy_shifted(face_mask, placed, dr, dc)
    return (dr, dc), (placed & t).astype(np.uint8)


def _copy_shifted(src: np.ndarray, dst: np.ndarray, dr: int, dc: int) -> None:
    """dst[r + dr, c + dc] = src[r, c] for indices that land in bounds."""
    sh, sw = src.shape[-2:]
    dh, dw = dst.shape[-2:]
    r0, r1 = max(0, -dr), min(sh, dh - dr)
    c0, c1 = max(0, -dc), min(sw, dw - dc)
    if r0 >= r1 or c0 >= c1:
        return
    dst[..., r0 + dr : r1 + dr, c0 + dc : c1 + dc] = src[..., r0:r1, c0:c1]


def align_merge(
    face_data: np.ndarray, face_mask: np.ndarray, d_t: np.ndarray, m_t: np.ndarray
) -> np.ndarray:
    """Paste the centroid-aligned face into the target: only pixels in the
    overlap of the translated face mask and the target blur mask change."""
    if d_t.shape[-2:] != m_t.shape:
        raise ShapeError(f"target {d_t.shape} vs mask {m_t.shape}")
    (dr, dc), region = paste_plan(face_mask, m_t)
    placed = np.zeros_like(d_t)
    _copy_shifted(face_data, placed, dr, dc)
    sel = region.astype(bool)
    out = d_t.copy()
    out[..., sel] = placed[..., sel]
    return out


def cp(
    d_s: np.ndarray,
    m_s: np.ndarray,
    d_t: np.ndarray,
    m_t: np.ndarray,
    rng: np.random.Generator,
    cfg: CPConfig,
) -> np.ndarray:
    """Full copy-and-paste: copy + augment the source face, then align and
    merge it into the target blur region. Channels-first data."""
    m_s = resize_mask_to(m_s, d_s.shape[-2], d_s.shape[-1])
    face_data, face_mask = copy_augment(d_s, m_s, rng, cfg)
    return align_merge(face_data, face_mask, d_t, m_t)


def cp_image(
    i_s: np.ndarray,
    m_s: np.ndarray,
    i_t: np.ndarray,
    m_t: np.ndarray,
    rng: np.random.Generator,
    cfg: CPConfig,
) -> np.ndarray:
    """Image-level cp on (H, W, 3) arrays."""
    merged = cp(
        np.moveaxis(core.as_image(i_s), 2, 0),
        m_s,
        np.moveaxis(core.as_image(i_t), 2, 0),
        m_t,
        rng,
        cfg,
    )
    return np.moveaxis(merged, 0, 2)


def icp_apply(
    batch: list[tuple[np.ndarray, np.ndarray | None]],
    library: SourceLibrary,
    rng: np.random.Generator,
    cfg: CPConfig,
) -> tuple[list[np.ndarray], int]:
    """Independently merge each (image, blur-mask) element with probability
    cfg.probability using a uniformly drawn source record. Elements whose
    masks are empty or missing are left unchanged. Returns the new images
    and the number of augmented elements.
    """
    out = []
    applied = 0
    for image, m_t in batch:
        if rng.random() >= cfg.probability or m_t is None:
            out.append(image)
            continue
        record = library.sample(rng)
        try:
            out.append(cp_image(record.image, record.facemask, image, m_t, rng, cfg))
            applied += 1
        except (EmptyFaceError, EmptyTargetMaskError):
            out.append(image)
    return out, applied


@dataclass
class EncoderSplit:
    """An encoder split into g1 = stages [E0..split] and g2 = the rest.

    Running g1 then g2 with no merge reproduces the unsplit pass exactly.
    """

    encoder: Encoder
    split_stage: int

    def g1(self, x: torch.Tensor) -> EncoderTrace:
        return self.encoder.forward_partial(x, self.split_stage)

    def g2(self, trace: EncoderTrace):
        return self.encoder.resume(trace)


def fcp_merge(
    d_s: np.ndarray,
    d_t: torch.Tensor,
    m_s: np.ndarray,
    m_t: list[np.ndarray | None],
    rng: np.random.Generator,
    cfg: CPConfig,
) -> tuple[torch.Tensor, int]:
    """Merge detached source features into a batch of target features.

    Facemasks are nearest-resampled to the feature resolution. The pasted
    values enter the graph as constants; target features outside each paste
    region stay on the autograd graph untouched (bit-exact).
    """
    fh, fw = d_s.shape[-2:]
    m_s_f = resize_mask_to(m_s, fh, fw)
    th, tw = d_t.shape[-2:]
    merged_rows = []
    n_merged = 0
    for b in range(d_t.shape[0]):
        if m_t[b] is None:
            merged_rows.append(d_t[b])
            continue
        m_t_f = resize_mask_to(m_t[b], th, tw)
        try:
            face_data, face_mask = copy_augment(d_s, m_s_f, rng, cfg)
            (dr, dc), region = paste_plan(face_mask, m_t_f)
        except (EmptyFaceError, EmptyTargetMaskError):
            merged_rows.append(d_t[b])
            continue
        placed = np.zeros(d_t.shape[1:], dtype=np.float32)
        _copy_shifted(face_data, placed, dr, dc)
        sel = torch.from_numpy(region.astype(bool))[None]
        merged_rows.append(torch.where(sel, torch.from_numpy(placed), d_t[b]))
        n_merged += 1
    return torch.stack(merged_rows), n_merged


def fcp_forward(
    split: EncoderSplit,
    i_s: torch.Tensor,
    i_t: torch.Tensor,
    m_s: np.ndarray,
    m_t: list[np.ndarray | None],
    rng: np.random.Generator,
    cfg: CPConfig,
):
    """Feature-level copy and paste inside the encoder.

    With probability cfg.probability (drawn once per mini-batch, matching the
    one-source-per-batch regime) the source image's g1 features are merged
    into each target element's g1 features. Source activations are computed
    without autograd and detached, so no gradient reaches the source image.
    Source features are discarded after the merge.

    Returns (encoder_output, n_merged).
    """
    trace_t = split.g1(i_t)
    n_merged = 0
    if rng.random() < cfg.probability:
        with torch.no_grad():
            d_s = split.g1(i_s if i_s.ndim == 4 else i_s[None]).cur[0].detach()
        trace_t.cur, n_merged = fcp_merge(d_s.numpy(), trace_t.cur, m_s, m_t, rng, cfg)
    return split.g2(trace_t), n_merged
