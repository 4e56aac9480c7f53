"""Synthetic portrait-like fixtures for toy training, demos, and tests.

Each sample is a soft-edged elliptical "person" over a gradient background,
with a circular face region and landmark sidecars, so every pipeline stage
(obfuscation, trimaps, CP, training, evaluation) can run at desk scale
without real data.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import core


def make_portrait_sample(seed: int, size: int = 64) -> dict:
    rng = np.random.default_rng(seed)
    h = w = size
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")

    # person: ellipse in the lower-center, soft 2-3 px boundary band
    center_r = h * float(rng.uniform(0.52, 0.6))
    center_c = w * float(rng.uniform(0.45, 0.55))
    ax_r = h * float(rng.uniform(0.3, 0.38))
    ax_c = w * float(rng.uniform(0.22, 0.3))
    d = np.sqrt(((rr - center_r) / ax_r) ** 2 + ((cc - center_c) / ax_c) ** 2)
    band = 2.5 / min(ax_r, ax_c)
    alpha = np.clip((1.0 - d) / band + 0.5, 0.0, 1.0).astype(np.float32)

    # face: disc in the upper part of the ellipse, well inside the core
    face_r = center_r - 0.55 * ax_r
    face_c = center_c
    face_rad = 0.32 * min(ax_r, ax_c)
    face = (np.sqrt((rr - face_r) ** 2 + (cc - face_c) ** 2) <= face_rad).astype(np.uint8)

    bg_a = rng.uniform(0.0, 0.35, size=3)
    bg_b = rng.uniform(0.55, 0.95, size=3)
    t = (cc / max(w - 1, 1))[:, :, None]
    background = (bg_a[None, None] * (1 - t) + bg_b[None, None] * t).astype(np.float32)
    fg_color = rng.uniform(0.0, 1.0, size=3)
    fg_tint = 0.15 * np.sin(rr / 7.0)[:, :, None].astype(np.float32)
    foreground = np.clip(fg_color[None, None] + fg_tint, 0.0, 1.0).astype(np.float32)
    image = core.composite(foreground, background, alpha)

    # landmark ring around the face disc: lower arc = cheeks, top = brows
    angles_cheek = np.linspace(-0.25 * np.pi, 1.25 * np.pi, 7)
    angles_brow = np.linspace(1.45 * np.pi, 1.8 * np.pi, 3)
    ring = 1.05 * face_rad
    cheek = [
        [float(np.clip(face_r + ring * np.sin(a), 0, h - 1)), float(np.clip(face_c + ring * np.cos(a), 0, w - 1))]
        for a in angles_cheek
    ]
    brows = [
        [float(np.clip(face_r + ring * np.sin(a), 0, h - 1)), float(np.clip(face_c + ring * np.cos(a), 0, w - 1))]
        for a in angles_brow
    ]
    return {
        "image": image,
        "alpha": alpha,
        "facemask": face,
        "landmarks": {"cheek_contour": cheek, "eyebrows": brows},
    }


def write_dataset_tree(
    root: str | Path,
    n: int,
    size: int = 64,
    seed: int = 0,
    with_facemasks: bool = True,
    with_landmarks: bool = True,
) -> list[str]:
    """Write n samples in the dataset layout (original/, mask/, facemask/)."""
    root = Path(root)
    (root / "original").mkdir(parents=True, exist_ok=True)
    (root / "mask").mkdir(parents=True, exist_ok=True)
    if with_facemasks:
        (root / "facemask").mkdir(parents=True, exist_ok=True)
    stems = []
    for i in range(n):
        sample = make_portrait_sample(seed * 10_000 + i, size)
        stem = f"sample_{i:04d}"
        core.save_raster(root / "original" / f"{stem}.png", sample["image"], "image")
        core.save_raster(root / "mask" / f"{stem}.png", sample["alpha"], "alpha")
        if with_facemasks:
            core.save_raster(root / "facemask" / f"{stem}.png", sample["facemask"], "mask")
        if with_landmarks:
            with open(root / "original" / f"{stem}.landmarks.json", "w", encoding="utf-8") as f:
                json.dump(sample["landmarks"], f)
        stems.append(stem)
    return stems


def write_source_library(root: str | Path, n: int, size: int = 64, seed: int = 77) -> list[str]:
    """Write a CP source library (images/ + facemasks/) of clear-face samples."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "facemasks").mkdir(parents=True, exist_ok=True)
    stems = []
    for i in range(n):
        sample = make_portrait_sample(seed * 10_000 + i, size)
        stem = f"source_{i:04d}"
        core.save_raster(root / "images" / f"{stem}.png", sample["image"], "image")
        core.save_raster(root / "facemasks" / f"{stem}.png", sample["facemask"], "mask")
        stems.append(stem)
    return stems
