"""Face obfuscation pipeline: landmark polygon -> private area -> blur.

The pipeline derives a face mask from cheek/eyebrow landmarks, excludes the
alpha transition band so fine boundary detail survives anonymization, and
replaces the remaining private pixels by Gaussian blur, mosaic cells, or
zeros. Pixels outside the final mask are returned bit-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import core
from .errors import DegenerateFaceError, ShapeError

METHOD_BLUR = "blur"
METHOD_MOSAIC = "mosaic"
METHOD_ZERO = "zero"


@dataclass(frozen=True)
class FaceLandmarks:
    """Ordered landmark points (row, col) outlining cheeks and eyebrows."""

    cheek_contour: tuple[core.Point2D, ...]
    eyebrows: tuple[core.Point2D, ...]

    def __post_init__(self):
        if len(self.cheek_contour) < 3 or len(self.eyebrows) < 3:
            raise ValueError("each landmark list needs at least 3 points")

    def polygon(self) -> list[tuple[float, float]]:
        """The face boundary ring: cheek contour followed by eyebrow points."""
        ring = list(self.cheek_contour) + list(self.eyebrows)
        return [(p.row, p.col) for p in ring]


@dataclass(frozen=True)
class ObfuscationConfig:
    method: str = METHOD_BLUR
    # Blur sigma and mosaic cell size scale with the face bounding-box diagonal.
    blur_sigma_fraction: float = 0.08
    mosaic_cell_fraction: float = 0.1
    mosaic_min_cell: int = 4

    def __post_init__(self):
        if self.method not in (METHOD_BLUR, METHOD_MOSAIC, METHOD_ZERO):
            raise ValueError(f"unknown obfuscation method: {self.method!r}")
        if self.blur_sigma_fraction <= 0 or self.mosaic_cell_fraction <= 0:
            raise ValueError("obfuscation fractions must be positive")


def load_landmarks(path: str | Path) -> FaceLandmarks:
    """Read a `<stem>.landmarks.json` sidecar: lists of [row, col] pairs."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    return FaceLandmarks(
        cheek_contour=tuple(core.Point2D(float(r), float(c)) for r, c in doc["cheek_contour"]),
        eyebrows=tuple(core.Point2D(float(r), float(c)) for r, c in doc["eyebrows"]),
    )


def _fill_polygon(ring: list[tuple[float, float]], h: int, w: int) -> np.ndarray:
    # Even-odd rule at integer pixel centers, half-open crossing test: an edge
    # (r1,c1)-(r2,c2) crosses the +col ray from (r,c) iff (r1 > r) != (r2 > r)
    # and c is strictly left of the edge/ray intersection.
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    inside = np.zeros((h, w), dtype=bool)
    n = len(ring)
    for k in range(n):
        r1, c1 = ring[k]
        r2, c2 = ring[(k + 1) % n]
        if r1 == r2:
            continue
        straddles = (r1 > rows) != (r2 > rows)
        with np.errstate(invalid="ignore"):
            cross_col = c1 + (rows - r1) * (c2 - c1) / (r2 - r1)
        inside ^= straddles & (cols < cross_col)
    return inside.astype(np.uint8)


def face_mask_from_landmarks(lm: FaceLandmarks, h: int, w: int) -> np.ndarray:
    """Fill the polygon bounded by the cheek contour and eyebrow points."""
    ring = lm.polygon()
    for r, c in ring:
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"landmark ({r}, {c}) outside {h}x{w} image")
    mask = _fill_polygon(ring, h, w)
    if mask.sum() == 0:
        raise DegenerateFaceError("landmark polygon has zero filled area")
    return mask


def transition_mask(alpha: np.ndarray) -> np.ndarray:
    """Mark pixels with fractional opacity: 1 exactly where 0 < alpha < 1."""
    a = core.as_alpha(alpha)
    return ((a > 0.0) & (a < 1.0)).astype(np.uint8)


def adjust_private_area(face: np.ndarray, transition: np.ndarray) -> np.ndarray:
    """Exclude the transition band from the face mask: face AND NOT transition."""
    f = core.as_mask(face)
    t = core.as_mask(transition)
    if f.shape != t.shape:
        raise ShapeError(f"face {f.shape} vs transition {t.shape}")
    return (f & (1 - t)).astype(np.uint8)


def _mask_bbox_diagonal(mask: np.ndarray) -> float:
    rows, cols = np.nonzero(mask)
    dh = rows.max() - rows.min() + 1
    dw = cols.max() - cols.min() + 1
    return float(np.hypot(dh, dw))


def obfuscate_region(
    img: np.ndarray, mask: np.ndarray, cfg: ObfuscationConfig, rng_seed: int = 0
) -> np.ndarray:
    """Replace masked pixels using the configured method.

    Blur and mosaic statistics are computed over the full image and masked in,
    so the replacement may read unmasked pixels; unmasked output pixels are
    always bit-identical to the input. The seed is accepted for interface
    stability; all three methods are deterministic.
    """
    image = core.as_image(img)
    m = core.as_mask(mask)
    if m.shape != image.shape[:2]:
        raise ShapeError(f"mask {m.shape} does not match image {image.shape}")
    if m.sum() == 0:
        return image.copy()

    diag = _mask_bbox_diagonal(m)
    if cfg.method == METHOD_ZERO:
        replacement = np.zeros_like(image)
    elif cfg.method == METHOD_BLUR:
        sigma = cfg.blur_sigma_fraction * diag
        replacement = np.stack(
            [
                gaussian_filter(image[:, :, c], sigma=sigma, mode="reflect", truncate=3.0)
                for c in range(3)
            ],
            axis=2,
        ).astype(np.float32)
    else:
        cell = max(cfg.mosaic_min_cell, int(round(cfg.mosaic_cell_fraction * diag)))
        replacement = np.empty_like(image)
        h, w = m.shape
        for r0 in range(0, h, cell):
            for c0 in range(0, w, cell):
                block = image[r0 : r0 + cell, c0 : c0 + cell]
                replacement[r0 : r0 + cell, c0 : c0 + cell] = block.mean(axis=(0, 1))

    out = image.copy()
    sel = m.astype(bool)
    out[sel] = np.clip(replacement[sel], 0.0, 1.0)
    return out


def obfuscate(
    img: np.ndarray,
    lm: FaceLandmarks,
    alpha: np.ndarray,
    cfg: ObfuscationConfig,
    rng_seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Run the full pipeline: landmarks -> private area -> transition ->
    adjusted area -> obfuscation.

    Returns the obfuscated image and the adjusted private-area mask (which
    records exactly which pixels were replaced). Transition pixels are never
    touched.
    """
    image = core.as_image(img)
    a = core.as_alpha(alpha)
    h, w = a.shape
    if image.shape[:2] != (h, w):
        raise ShapeError(f"image {image.shape} does not match alpha {a.shape}")
    face = face_mask_from_landmarks(lm, h, w)
    trans = transition_mask(a)
    private = adjust_private_area(face, trans)
    return obfuscate_region(image, private, cfg, rng_seed), private


def obfuscate_with_mask(
    img: np.ndarray,
    face: np.ndarray,
    alpha: np.ndarray,
    cfg: ObfuscationConfig,
    rng_seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Pipeline variant for manually annotated face masks (landmark bypass)."""
    trans = transition_mask(alpha)
    private = adjust_private_area(face, trans)
    return obfuscate_region(img, private, cfg, rng_seed), private


def obfuscate_tree(
    data_root: str | Path, out_dir: str | Path, cfg: ObfuscationConfig, rng_seed: int = 0
) -> list[str]:
    """Obfuscate every image under `data_root/original` with GT alpha in
    `data_root/mask`.

    Landmarks come from `<stem>.landmarks.json` sidecars next to the images; a
    manual `<stem>.facemask.png` sidecar bypasses the polygon fill. Writes
    `<stem>.png` and `<stem>.facemask.png` into `out_dir` (atomic writes) and
    returns the processed stems.
    """
    root = Path(data_root)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    done = []
    for img_path in sorted((root / "original").iterdir()):
        if img_path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        stem = img_path.stem
        image = core.load_raster(img_path, "image")
        alpha = core.load_raster(root / "mask" / f"{stem}.png", "alpha")
        manual = img_path.with_name(f"{stem}.facemask.png")
        if manual.is_file():
            face = core.load_raster(manual, "mask")
            blurred, facemask = obfuscate_with_mask(image, face, alpha, cfg, rng_seed)
        else:
            lm = load_landmarks(img_path.with_name(f"{stem}.landmarks.json"))
            blurred, facemask = obfuscate(image, lm, alpha, cfg, rng_seed)
        core.save_raster(out / f"{stem}.png", blurred, "image")
        core.save_raster(out / f"{stem}.facemask.png", facemask, "mask")
        done.append(stem)
    return done
