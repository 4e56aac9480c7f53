"""Losses, the optimization loop, checkpointing, and the protocol harness
that evaluates a trained model on both the privacy-preserved and the
non-privacy validation sets.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import core, datapipe, metrics, p3mcp
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DivergenceError
from .p3mnet import NetworkOutput, P3MNet, P3MNetConfig, build_p3mnet

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 100


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5  # fixed, no schedule
    batch_size: int = 8
    epochs: int = 150
    seed: int = 0
    toy: bool = False
    out_dir: str | None = None
    checkpoint_every: int = 50  # epochs
    log_every: int = 10  # steps
    device: str = "cpu"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch size and epochs must be >= 1")


@dataclass
class LossReport:
    l_semantic: float
    l_detail: float
    l_fusion: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {"l_semantic": self.l_semantic, "l_detail": self.l_detail,
                "l_fusion": self.l_fusion, "total": self.total}


def loss_semantic(seg_logits: torch.Tensor, gt_trimap: torch.Tensor) -> torch.Tensor:
    """Mean 3-class cross entropy over all pixels."""
    return F.cross_entropy(seg_logits, gt_trimap.long())


def loss_detail(detail_alpha: torch.Tensor, gt_alpha: torch.Tensor,
                transition: torch.Tensor) -> torch.Tensor:
    """Mean absolute error restricted to the transition region (0 if empty)."""
    t = transition.float()
    denom = t.sum()
    if denom.item() == 0:
        return torch.zeros((), dtype=detail_alpha.dtype)
    return (torch.abs(detail_alpha - gt_alpha) * t).sum() / denom


def loss_fusion(fused_alpha: torch.Tensor, gt_alpha: torch.Tensor) -> torch.Tensor:
    """Whole-image mean absolute error."""
    return torch.abs(fused_alpha - gt_alpha).mean()


def compute_losses(out: NetworkOutput, gt_alpha: torch.Tensor,
                   gt_trimap: torch.Tensor) -> tuple[torch.Tensor, LossReport]:
    transition = (gt_trimap == core.TRIMAP_TRANSITION).unsqueeze(1)
    alpha = gt_alpha.unsqueeze(1) if gt_alpha.ndim == 3 else gt_alpha
    l_sem = loss_semantic(out.seg_logits, gt_trimap)
    l_det = loss_detail(out.detail_alpha, alpha, transition)
    l_fus = loss_fusion(out.fused_alpha, alpha)
    total = l_sem + l_det + l_fus
    report = LossReport(l_sem.item(), l_det.item(), l_fus.item(), total.item())
    return total, report


def batch_to_tensors(samples: list[dict]) -> dict[str, torch.Tensor]:
    images = np.stack([np.moveaxis(s["image"], 2, 0) for s in samples]).astype(np.float32)
    alphas = np.stack([s["alpha"] for s in samples]).astype(np.float32)
    trimaps = np.stack([s["trimap"] for s in samples]).astype(np.int64)
    return {
        "image": torch.from_numpy(images),
        "alpha": torch.from_numpy(alphas),
        "trimap": torch.from_numpy(trimaps),
    }


def train_step(
    model: P3MNet,
    optimizer: torch.optim.Optimizer,
    batch: dict[str, torch.Tensor],
    cp_cfg: p3mcp.CPConfig | None = None,
    cp_source: p3mcp.SourceFaceRecord | None = None,
    cp_masks: list[np.ndarray | None] | None = None,
    cp_rng: np.random.Generator | None = None,
) -> LossReport:
    """One gradient step on the unit-weighted sum of the three losses.

    Feature-level CP runs inside the forward pass when configured; image-level
    CP belongs in the data path before batching.
    """
    model.train()
    if cp_cfg is not None and cp_cfg.mode == p3mcp.MODE_FCP and cp_source is not None:
        split = p3mcp.EncoderSplit(model.encoder, cp_cfg.fcp_split_index)
        i_s = torch.from_numpy(
            np.moveaxis(cp_source.image, 2, 0).astype(np.float32)
        )[None]
        enc_out, _ = p3mcp.fcp_forward(
            split, i_s, batch["image"], cp_source.facemask,
            cp_masks or [None] * batch["image"].shape[0], cp_rng, cp_cfg,
        )
        out = model.decode(enc_out)
    else:
        out = model(batch["image"])
    total, report = compute_losses(out, batch["alpha"], batch["trimap"])
    if not np.isfinite(report.total):
        raise DivergenceError("non-finite training loss", {"losses": report.as_dict()})
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return report


def count_parameters(model: nn.Module) -> int:
    """Exact count of learnable scalars."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def _icp_batch(samples, library, rng, cp_cfg):
    images, _ = p3mcp.icp_apply(
        [(s["image"], s.get("facemask")) for s in samples], library, rng, cp_cfg
    )
    return [{**s, "image": img} for s, img in zip(samples, images)]


@dataclass
class FitResult:
    checkpoint_paths: list[Path]
    loss_history: list[LossReport]
    reports: dict[str, metrics.MetricReport] = field(default_factory=dict)


def apply_toy_overrides(net_cfg: P3MNetConfig, train_cfg: TrainConfig,
                        aug_cfg: datapipe.AugmentationConfig):
    """Toy regime: 64 px samples, width multiplier 0.25, at most 20 epochs."""
    enc = replace(net_cfg.encoder, scale=0.25, window_size=4)
    net = replace(net_cfg, encoder=enc)
    train = replace(train_cfg, epochs=min(train_cfg.epochs, 20))
    aug = replace(aug_cfg, crop_sizes=(64,), out_size=64, trimap_kernel=3)
    return net, train, aug


def fit(
    net_cfg: P3MNetConfig,
    train_cfg: TrainConfig,
    dataset,
    aug_cfg: datapipe.AugmentationConfig | None = None,
    cp_cfg: p3mcp.CPConfig | None = None,
    source_library: p3mcp.SourceLibrary | None = None,
    val_p_dir: str | Path | None = None,
    val_np_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    config_doc: dict | None = None,
) -> FitResult:
    """Train the model, writing periodic checkpoints and line-delimited JSON
    logs; evaluates the protocol on both validation sets when provided.

    `dataset` must expose __len__ and load(index, epoch) -> dict with image,
    alpha, trimap and optional facemask arrays.
    """
    if train_cfg.toy:
        net_cfg, train_cfg, _ = apply_toy_overrides(
            net_cfg, train_cfg, aug_cfg or datapipe.AugmentationConfig()
        )
    if cp_cfg is not None and source_library is None:
        raise ConfigError("copy-paste is enabled but no source library was given")

    out_dir = Path(train_cfg.out_dir) if train_cfg.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_file = open(out_dir / "train_log.jsonl", "a", encoding="utf-8") if out_dir else None

    model = build_p3mnet(net_cfg, train_cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate)
    start_epoch = 0
    if resume_from is not None:
        _, state_dict, opt_state, meta = load_checkpoint(resume_from)
        model.load_state_dict(state_dict)
        if opt_state is not None:
            optimizer.load_state_dict(opt_state)
        start_epoch = int(meta.get("epoch", np.asarray(0))) + 1

    seed = train_cfg.seed
    history: list[LossReport] = []
    checkpoints: list[Path] = []
    initial_total: float | None = None
    runaway_steps = 0
    step = 0

    def emit(doc: dict) -> None:
        if log_file:
            log_file.write(json.dumps(doc) + "\n")
            log_file.flush()

    try:
        for epoch in range(start_epoch, train_cfg.epochs):
            order = np.random.default_rng([seed, 1, epoch]).permutation(len(dataset))
            for lo in range(0, len(order), train_cfg.batch_size):
                idxs = order[lo : lo + train_cfg.batch_size]
                samples = [dataset.load(int(i), epoch) for i in idxs]
                cp_rng = np.random.default_rng([seed, 2, epoch, step])
                cp_masks = None
                cp_source = None
                if cp_cfg is not None and cp_cfg.mode == p3mcp.MODE_ICP:
                    samples = _icp_batch(samples, source_library, cp_rng, cp_cfg)
                elif cp_cfg is not None and cp_cfg.mode == p3mcp.MODE_FCP:
                    cp_source = source_library.sample(cp_rng)
                    cp_masks = [s.get("facemask") for s in samples]
                batch = batch_to_tensors(samples)
                report = train_step(model, optimizer, batch, cp_cfg, cp_source, cp_masks, cp_rng)
                history.append(report)
                if initial_total is None:
                    initial_total = report.total
                runaway_steps = runaway_steps + 1 if report.total > DIVERGENCE_FACTOR * initial_total else 0
                if runaway_steps >= DIVERGENCE_PATIENCE:
                    raise DivergenceError(
                        f"loss exceeded {DIVERGENCE_FACTOR}x its initial value "
                        f"for {DIVERGENCE_PATIENCE} consecutive steps",
                        {"initial": initial_total, "last": report.total},
                    )
                if step % train_cfg.log_every == 0:
                    emit({"event": "step", "epoch": epoch, "step": step, **report.as_dict()})
                step += 1
            if out_dir and ((epoch + 1) % train_cfg.checkpoint_every == 0 or epoch == train_cfg.epochs - 1):
                path = out_dir / f"checkpoint_epoch{epoch:04d}.npz"
                save_checkpoint(path, model, config_doc or {}, optimizer, {"epoch": epoch, "step": step})
                checkpoints.append(path)
                emit({"event": "checkpoint", "epoch": epoch, "path": str(path)})
    except DivergenceError as err:
        if out_dir:
            with open(out_dir / "divergence_dump.json", "w", encoding="utf-8") as f:
                json.dump({"error": str(err), **err.diagnostics}, f, indent=2)
        raise
    finally:
        if log_file:
            log_file.close()

    result = FitResult(checkpoints, history)
    if val_p_dir is not None and val_np_dir is not None:
        rep_bb, rep_bn = evaluate_protocol(model, val_p_dir, val_np_dir, out_dir)
        result.reports = {"B:B": rep_bb, "B:N": rep_bn}
    return result


def infer_alpha_any_size(model: P3MNet, img: np.ndarray) -> np.ndarray:
    """Predict a fused alpha for an image of any size: the forward runs at
    the nearest multiple-of-32 resolution and the result is resampled back,
    so evaluation happens at the stored ground-truth resolution."""
    h, w = img.shape[:2]
    h32 = max(32, int(round(h / 32)) * 32)
    w32 = max(32, int(round(w / 32)) * 32)
    net_in = img
    if (h32, w32) != (h, w):
        moved = np.moveaxis(img, 2, 0)
        net_in = np.moveaxis(core.resample(moved, h32, w32, "bilinear"), 0, 2)
        net_in = np.clip(net_in, 0.0, 1.0)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model(torch.from_numpy(np.moveaxis(net_in, 2, 0).astype(np.float32))[None])
    if was_training:
        model.train()
    alpha = out.fused_alpha[0, 0].numpy()
    if (h32, w32) != (h, w):
        alpha = np.clip(core.resample(alpha, h, w, "bilinear"), 0.0, 1.0)
    return alpha.astype(np.float32)


def evaluate_model_dir(
    model: P3MNet,
    val_dir: str | Path,
    out_dir: Path | None,
    tag: str,
    trimap_kernel: int = 25,
) -> metrics.MetricReport:
    """Run inference over val_dir/original and score against val_dir/mask."""
    val_dir = Path(val_dir)
    reports = []
    rows = []
    for img_path in sorted((val_dir / "original").iterdir()):
        if img_path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        stem = img_path.stem
        image = core.load_raster(img_path, "image")
        gt = core.load_raster(val_dir / "mask" / f"{stem}.png", "alpha")
        kernel = datapipe.scaled_trimap_kernel(trimap_kernel, gt.shape[0] / 512.0)
        trimap = datapipe.trimap_from_alpha(gt, kernel)
        pred = infer_alpha_any_size(model, image)
        rep = metrics.evaluate(pred, gt, trimap)
        reports.append(rep)
        rows.append({"image": stem, **rep.as_row()})
    agg = metrics.aggregate(reports)
    if out_dir is not None:
        with open(out_dir / f"eval_{tag}.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["image", *metrics.MetricReport.COLUMNS])
            writer.writeheader()
            writer.writerows(rows)
        metrics.write_aggregate_json(
            agg,
            out_dir / f"eval_{tag}.json",
            protocol=tag,
            images=len(reports),
            resolution="native ground-truth",
            trimap_kernel=trimap_kernel,
        )
    return agg


def evaluate_protocol(
    model: P3MNet,
    val_p_dir: str | Path,
    val_np_dir: str | Path,
    out_dir: Path | None = None,
    trimap_kernel: int = 25,
) -> tuple[metrics.MetricReport, metrics.MetricReport]:
    """Evaluate under both protocols of the privacy-preserving setting:
    B:B on the blurred validation set and B:N on the normal one."""
    rep_bb = evaluate_model_dir(model, val_p_dir, out_dir, "B:B", trimap_kernel)
    rep_bn = evaluate_model_dir(model, val_np_dir, out_dir, "B:N", trimap_kernel)
    return rep_bb, rep_bn
