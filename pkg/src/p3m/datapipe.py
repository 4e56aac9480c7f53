"""Dataset indexing, trimap generation, and geometric training augmentation.

Dataset layout convention (all matched by filename stem):

    root/
      original/   RGB images (.png or .jpg)
      mask/       ground-truth alpha mattes (.png, 8-bit grayscale)
      facemask/   binary face masks (.png), optional
      trimap/     materialized trimaps (.png at levels 0/128/255), optional
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import core
from .errors import DatasetIndexError

_IMAGE_EXTS = (".png", ".jpg", ".jpeg")

SPLIT_TRAIN = "train"
SPLIT_VAL_P = "val_p"
SPLIT_VAL_NP = "val_np"


@dataclass(frozen=True)
class SampleRecord:
    image_path: Path
    alpha_path: Path
    facemask_path: Path | None
    split: str

    @property
    def stem(self) -> str:
        return self.image_path.stem


@dataclass(frozen=True)
class AugmentationConfig:
    crop_sizes: tuple[int, ...] = (512, 768, 1024)
    out_size: int = 512
    hflip_prob: float = 0.5
    trimap_kernel: int = 25

    def __post_init__(self):
        if self.trimap_kernel < 1 or self.trimap_kernel % 2 == 0:
            raise ValueError("trimap kernel must be odd and >= 1")
        if any(c < self.out_size / 2 for c in self.crop_sizes):
            raise ValueError("crop sizes must be at least half the output size")


def scan_dataset(root: str | Path, split: str = SPLIT_TRAIN) -> list[SampleRecord]:
    """Index a dataset tree, matching images to alphas by stem.

    Raises DatasetIndexError listing any stem present in only one of
    original/ and mask/. Facemasks are matched when a facemask/ directory
    exists; a missing facemask is an offender except for the val_np split,
    where non-privacy images carry no facemask.
    """
    root = Path(root)
    images = {
        p.stem: p
        for p in sorted((root / "original").iterdir())
        if p.suffix.lower() in _IMAGE_EXTS
    }
    alphas = {p.stem: p for p in sorted((root / "mask").glob("*.png"))}
    offenders = [f"mask/{s}.png has no image" for s in sorted(set(alphas) - set(images))]
    offenders += [f"original/{p.name} has no alpha" for s, p in images.items() if s not in alphas]

    facemask_dir = root / "facemask"
    facemasks: dict[str, Path] = {}
    if facemask_dir.is_dir():
        facemasks = {p.stem: p for p in sorted(facemask_dir.glob("*.png"))}
        if split != SPLIT_VAL_NP:
            offenders += [
                f"facemask/{s}.png missing" for s in sorted(set(images) & set(alphas) - set(facemasks))
            ]
    if offenders:
        raise DatasetIndexError(
            f"inconsistent dataset at {root}: " + "; ".join(offenders), offenders
        )
    return [
        SampleRecord(images[s], alphas[s], facemasks.get(s), split) for s in sorted(images)
    ]


def trimap_from_alpha(alpha: np.ndarray, kernel: int = 25) -> np.ndarray:
    """Build a 3-class trimap: the transition band is the soft region
    {0 < alpha < 1} dilated by a kernel x kernel square; FG is {alpha == 1}
    outside the band; BG is the remainder.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError("kernel must be odd and >= 1")
    a = core.as_alpha(alpha)
    soft = (a > 0.0) & (a < 1.0)
    if kernel > 1:
        soft = ndimage.binary_dilation(soft, structure=np.ones((kernel, kernel), dtype=bool))
    tri = np.full(a.shape, core.TRIMAP_BG, dtype=np.uint8)
    tri[(a == 1.0) & ~soft] = core.TRIMAP_FG
    tri[soft] = core.TRIMAP_TRANSITION
    return tri


def save_trimap(path: str | Path, trimap: np.ndarray) -> None:
    """Store a trimap as an 8-bit PNG at levels {0, 128, 255}."""
    levels = np.array([0, 128, 255], dtype=np.uint8)
    core.save_raster(path, levels[np.asarray(trimap)] / 255.0, "alpha")


def load_trimap(path: str | Path) -> np.ndarray:
    arr = core.load_raster(path, "alpha")
    return np.asarray(np.rint(arr * 2.0), dtype=np.uint8)


def materialize_trimaps(root: str | Path, kernel: int = 25) -> list[str]:
    """Write trimaps for every alpha under root/mask into root/trimap."""
    root = Path(root)
    out = root / "trimap"
    out.mkdir(parents=True, exist_ok=True)
    stems = []
    for alpha_path in sorted((root / "mask").glob("*.png")):
        alpha = core.load_raster(alpha_path, "alpha")
        save_trimap(out / alpha_path.name, trimap_from_alpha(alpha, kernel))
        stems.append(alpha_path.stem)
    return stems


def _crop_resize(arr: np.ndarray, r0: int, c0: int, size: int, out_size: int, mode: str) -> np.ndarray:
    patch = arr[r0 : r0 + size, c0 : c0 + size]
    if patch.ndim == 3:  # image, channels last
        moved = np.moveaxis(patch, 2, 0)
        return np.moveaxis(core.resample(moved, out_size, out_size, mode), 0, 2)
    return core.resample(patch, out_size, out_size, mode)


def random_crop_resize(
    sample: dict[str, np.ndarray], rng: np.random.Generator, cfg: AugmentationConfig
) -> dict[str, np.ndarray]:
    """Crop a square patch (size drawn from cfg.crop_sizes) and resize it to
    cfg.out_size, applying the identical geometric transform to image
    (bilinear), alpha (bilinear) and facemask (nearest).

    If the image is smaller than the drawn size, falls back to the largest
    feasible center crop.
    """
    h, w = sample["alpha"].shape
    size = int(rng.choice(cfg.crop_sizes))
    if size > min(h, w):
        size = min(h, w)
        r0 = (h - size) // 2
        c0 = (w - size) // 2
    else:
        r0 = int(rng.integers(0, h - size + 1))
        c0 = int(rng.integers(0, w - size + 1))
    out = {
        "image": _crop_resize(sample["image"], r0, c0, size, cfg.out_size, "bilinear"),
        "alpha": np.clip(_crop_resize(sample["alpha"], r0, c0, size, cfg.out_size, "bilinear"), 0.0, 1.0),
    }
    if sample.get("facemask") is not None:
        out["facemask"] = _crop_resize(sample["facemask"], r0, c0, size, cfg.out_size, "nearest")
    else:
        out["facemask"] = None
    out["resize_factor"] = cfg.out_size / size
    return out


def random_hflip(
    sample: dict[str, np.ndarray], rng: np.random.Generator, cfg: AugmentationConfig
) -> dict[str, np.ndarray]:
    """Flip all channels of the sample together with probability cfg.hflip_prob."""
    if rng.random() >= cfg.hflip_prob:
        return sample
    out = dict(sample)
    out["image"] = sample["image"][:, ::-1].copy()
    out["alpha"] = sample["alpha"][:, ::-1].copy()
    if sample.get("facemask") is not None:
        out["facemask"] = sample["facemask"][:, ::-1].copy()
    return out


def scaled_trimap_kernel(base_kernel: int, resize_factor: float) -> int:
    """Scale the trimap kernel with the crop resize factor, keeping it odd."""
    k = max(1, int(round(base_kernel * resize_factor)))
    return k if k % 2 == 1 else k + 1


class MattingDataset:
    """Loads records from disk and applies the training augmentation chain.

    Per-sample RNG streams derive from (seed, epoch, index), so batch content
    is deterministic regardless of worker count or iteration order.
    """

    def __init__(self, records: list[SampleRecord], cfg: AugmentationConfig, seed: int = 0,
                 augment: bool = True):
        self.records = records
        self.cfg = cfg
        self.seed = seed
        self.augment = augment

    def __len__(self) -> int:
        return len(self.records)

    def load_raw(self, index: int) -> dict[str, np.ndarray]:
        rec = self.records[index]
        sample = {
            "image": core.load_raster(rec.image_path, "image"),
            "alpha": core.load_raster(rec.alpha_path, "alpha"),
            "facemask": core.load_raster(rec.facemask_path, "mask")
            if rec.facemask_path is not None
            else None,
        }
        if sample["image"].shape[:2] != sample["alpha"].shape:
            raise DatasetIndexError(
                f"{rec.stem}: image {sample['image'].shape} vs alpha {sample['alpha'].shape}"
            )
        return sample

    def load(self, index: int, epoch: int = 0) -> dict[str, np.ndarray]:
        sample = self.load_raw(index)
        if not self.augment:
            sample["trimap"] = trimap_from_alpha(sample["alpha"], self.cfg.trimap_kernel)
            return sample
        rng = np.random.default_rng([self.seed, epoch, index])
        sample = random_crop_resize(sample, rng, self.cfg)
        sample = random_hflip(sample, rng, self.cfg)
        kernel = scaled_trimap_kernel(self.cfg.trimap_kernel, sample.pop("resize_factor"))
        sample["trimap"] = trimap_from_alpha(sample["alpha"], kernel)
        return sample
