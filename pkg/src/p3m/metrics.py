"""Alpha-matte evaluation: SAD, MSE, MAD, Grad, Conn and region variants.

Conventions follow the common matting benchmark practice: SAD, Grad and Conn
are divided by 1000, MSE/MAD are plain means with alpha in [0, 1]. Grad uses
first-order Gaussian derivative filters (sigma = 1.4, L2-normalized kernels,
replicate boundary); Conn uses thresholds 0.1..0.9 in steps of 0.1 with
4-connected components and the 0.15 connectivity slack.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import core
from .errors import EmptyRegionError, ShapeError

GRAD_SIGMA = 1.4
CONN_STEP = 0.1
CONN_SLACK = 0.15


@dataclass(frozen=True)
class RegionMasks:
    """Foreground / background / transition partition of an image."""

    fg: np.ndarray
    bg: np.ndarray
    transition: np.ndarray


@dataclass(frozen=True)
class MetricReport:
    sad: float
    mse: float
    mad: float
    sad_t: float
    mse_t: float
    mad_t: float
    sad_fg: float
    sad_bg: float
    grad: float
    conn: float

    # Column order mirrors the benchmark report tables.
    COLUMNS = ("SAD", "MSE", "MAD", "SAD-T", "MSE-T", "MAD-T", "SAD-FG", "SAD-BG", "Grad", "Conn")

    def as_row(self) -> dict[str, float]:
        return dict(zip(self.COLUMNS, (getattr(self, f.name) for f in fields(self))))


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2:
        raise ShapeError(f"pred {p.shape} vs gt {g.shape}")
    return p, g


def regions_from_trimap(trimap: np.ndarray) -> RegionMasks:
    t = np.asarray(trimap)
    if t.ndim != 2:
        raise ShapeError(f"expected (H, W) trimap, got {t.shape}")
    return RegionMasks(
        fg=(t == core.TRIMAP_FG).astype(np.uint8),
        bg=(t == core.TRIMAP_BG).astype(np.uint8),
        transition=(t == core.TRIMAP_TRANSITION).astype(np.uint8),
    )


def sad(pred: np.ndarray, gt: np.ndarray, region: np.ndarray | None = None) -> float:
    """Sum of absolute differences over the region (whole image if None), /1000."""
    p, g = _check_pair(pred, gt)
    diff = np.abs(p - g)
    if region is not None:
        diff = diff * core.as_mask(region)
    return float(diff.sum() / 1000.0)


def mse(pred: np.ndarray, gt: np.ndarray, region: np.ndarray | None = None) -> float:
    """Mean squared difference over the region."""
    p, g = _check_pair(pred, gt)
    sq = (p - g) ** 2
    if region is None:
        return float(sq.mean())
    m = core.as_mask(region).astype(bool)
    if not m.any():
        raise EmptyRegionError("mse over an empty region")
    return float(sq[m].mean())


def mad(pred: np.ndarray, gt: np.ndarray, region: np.ndarray | None = None) -> float:
    """Mean absolute difference over the region."""
    p, g = _check_pair(pred, gt)
    ab = np.abs(p - g)
    if region is None:
        return float(ab.mean())
    m = core.as_mask(region).astype(bool)
    if not m.any():
        raise EmptyRegionError("mad over an empty region")
    return float(ab[m].mean())


def _gauss(x: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-(x**2) / (2.0 * sigma**2)) / (sigma * np.sqrt(2.0 * np.pi))


def _dgauss(x: np.ndarray, sigma: float) -> np.ndarray:
    return -x * _gauss(x, sigma) / sigma**2


def gaussian_derivative_kernels(sigma: float = GRAD_SIGMA) -> tuple[np.ndarray, np.ndarray]:
    """2-D Gaussian derivative filters (col-derivative, row-derivative).

    Half size truncates where the Gaussian falls below 1e-2 of a unit
    impulse; kernels are L2-normalized.
    """
    eps = 1e-2
    half = int(np.ceil(sigma * np.sqrt(-2.0 * np.log(np.sqrt(2.0 * np.pi) * sigma * eps))))
    ax = np.arange(-half, half + 1, dtype=np.float64)
    hx = _gauss(ax[:, None], sigma) * _dgauss(ax[None, :], sigma)
    hx = hx / np.sqrt(np.sum(hx * hx))
    return hx, hx.T


def gaussian_gradient_magnitude(matte: np.ndarray, sigma: float = GRAD_SIGMA) -> np.ndarray:
    hx, hy = gaussian_derivative_kernels(sigma)
    gx = ndimage.convolve(matte.astype(np.float64), hx, mode="nearest")
    gy = ndimage.convolve(matte.astype(np.float64), hy, mode="nearest")
    return np.sqrt(gx**2 + gy**2)


def grad_metric(pred: np.ndarray, gt: np.ndarray) -> float:
    """Sum of squared gradient-magnitude differences, /1000."""
    p, g = _check_pair(pred, gt)
    diff = gaussian_gradient_magnitude(p) - gaussian_gradient_magnitude(g)
    return float(np.sum(diff**2) / 1000.0)


def _largest_component(binary: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(binary)  # default structure = 4-connectivity
    if n == 0:
        return np.zeros_like(binary, dtype=bool)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == sizes.argmax()


def connectivity_degree(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel connectivity maps (phi of pred, phi of gt).

    For each threshold theta in {0.1, ..., 0.9} the source region is the
    largest 4-connected component where both mattes are >= theta. A pixel is
    assigned the last threshold at which it was still connected; distances to
    that level below the 0.15 slack do not count against connectivity.
    """
    thresholds = np.round(np.arange(CONN_STEP, 1.0, CONN_STEP), 10)
    level = -np.ones_like(pred, dtype=np.float64)
    for i, theta in enumerate(thresholds):
        omega = _largest_component((pred >= theta) & (gt >= theta))
        drop = (level == -1) & ~omega
        level[drop] = thresholds[i - 1] if i > 0 else 0.0
    level[level == -1] = 1.0
    pred_d = pred - level
    gt_d = gt - level
    pred_phi = 1.0 - pred_d * (pred_d >= CONN_SLACK)
    gt_phi = 1.0 - gt_d * (gt_d >= CONN_SLACK)
    return pred_phi, gt_phi


def conn_metric(pred: np.ndarray, gt: np.ndarray) -> float:
    """Sum of absolute connectivity-degree differences, /1000."""
    p, g = _check_pair(pred, gt)
    pred_phi, gt_phi = connectivity_degree(p, g)
    return float(np.sum(np.abs(pred_phi - gt_phi)) / 1000.0)


def evaluate(pred: np.ndarray, gt: np.ndarray, trimap: np.ndarray) -> MetricReport:
    """Whole-image metrics plus region-restricted scores for one image."""
    regions = regions_from_trimap(trimap)
    return MetricReport(
        sad=sad(pred, gt),
        mse=mse(pred, gt),
        mad=mad(pred, gt),
        sad_t=sad(pred, gt, regions.transition),
        mse_t=mse(pred, gt, regions.transition),
        mad_t=mad(pred, gt, regions.transition),
        sad_fg=sad(pred, gt, regions.fg),
        sad_bg=sad(pred, gt, regions.bg),
        grad=grad_metric(pred, gt),
        conn=conn_metric(pred, gt),
    )


def aggregate(reports: list[MetricReport]) -> MetricReport:
    """Mean of per-image reports."""
    if not reports:
        raise EmptyRegionError("nothing to aggregate")
    vals = {f.name: float(np.mean([getattr(r, f.name) for r in reports])) for f in fields(MetricReport)}
    return MetricReport(**vals)


def evaluate_directory(
    pred_dir: str | Path,
    gt_dir: str | Path,
    trimap_dir: str | Path,
    csv_path: str | Path | None = None,
) -> MetricReport:
    """Evaluate matching alpha PNGs by stem; optionally write a per-image CSV."""
    pred_dir, gt_dir, trimap_dir = Path(pred_dir), Path(gt_dir), Path(trimap_dir)
    rows = []
    reports = []
    for gt_path in sorted(gt_dir.glob("*.png")):
        stem = gt_path.stem
        pred = core.load_raster(pred_dir / f"{stem}.png", "alpha")
        gt = core.load_raster(gt_path, "alpha")
        tri = np.asarray(
            (core.load_raster(trimap_dir / f"{stem}.png", "alpha") * 2.0).round(), dtype=np.uint8
        )
        rep = evaluate(pred, gt, tri)
        reports.append(rep)
        rows.append({"image": stem, **rep.as_row()})
    agg = aggregate(reports)
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["image", *MetricReport.COLUMNS])
            writer.writeheader()
            writer.writerows(rows)
    return agg


def write_aggregate_json(report: MetricReport, path: str | Path, **extra) -> None:
    doc = {**extra, "metrics": report.as_row()}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
