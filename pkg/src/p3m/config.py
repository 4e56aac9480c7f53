"""JSON experiment configuration with sections {encoder, network, cp, data,
train}. P3M_DATA_ROOT and P3M_SEED environment variables override the file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

from .backbone import EncoderConfig
from .datapipe import AugmentationConfig
from .errors import ConfigError
from .p3mcp import CPConfig
from .p3mnet import P3MNetConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class TrainSetup:
    network: P3MNetConfig
    train: TrainConfig
    aug: AugmentationConfig
    cp: CPConfig | None = None
    data_root: Path | None = None
    source_dir: Path | None = None
    val_p_dir: Path | None = None
    val_np_dir: Path | None = None


def _encoder_from_doc(doc: dict) -> EncoderConfig:
    doc = dict(doc)
    variant = doc.pop("variant", "resnet34")
    scale = doc.pop("scale", 1.0)
    if "depths" in doc:
        doc["depths"] = tuple(doc["depths"])
    if "stage_channels" in doc:
        doc["stage_channels"] = tuple(doc["stage_channels"])
    return EncoderConfig.preset(variant, scale=scale, **doc)


def load_config(path: str | Path) -> TrainSetup:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    try:
        encoder = _encoder_from_doc(doc.get("encoder", {}))
        net_doc = dict(doc.get("network", {}))
        if "decoder_channels" in net_doc and net_doc["decoder_channels"] is not None:
            net_doc["decoder_channels"] = tuple(net_doc["decoder_channels"])
        network = P3MNetConfig(encoder=encoder, **net_doc)
        cp_doc = doc.get("cp")
        cp = None
        if cp_doc:
            cp_doc = dict(cp_doc)
            if "scale_range" in cp_doc:
                cp_doc["scale_range"] = tuple(cp_doc["scale_range"])
            cp = CPConfig(**cp_doc)
        data_doc = dict(doc.get("data", {}))
        root = data_doc.pop("root", None)
        source_dir = data_doc.pop("source_dir", None)
        val_p = data_doc.pop("val_p", None)
        val_np = data_doc.pop("val_np", None)
        if "crop_sizes" in data_doc:
            data_doc["crop_sizes"] = tuple(data_doc["crop_sizes"])
        aug = AugmentationConfig(**data_doc)
        train = TrainConfig(**doc.get("train", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config {path}: {exc}") from exc

    env_root = os.environ.get("P3M_DATA_ROOT")
    if env_root:
        root = env_root
    env_seed = os.environ.get("P3M_SEED")
    if env_seed:
        train = replace(train, seed=int(env_seed))
    return TrainSetup(
        network=network,
        train=train,
        aug=aug,
        cp=cp,
        data_root=Path(root) if root else None,
        source_dir=Path(source_dir) if source_dir else None,
        val_p_dir=Path(val_p) if val_p else None,
        val_np_dir=Path(val_np) if val_np else None,
    )


def setup_to_doc(setup: TrainSetup) -> dict:
    """Serializable snapshot of a setup (stored in checkpoints)."""
    enc = setup.network.encoder
    return {
        "encoder": {
            "variant": enc.variant,
            "depths": list(enc.depths),
            "stage_channels": list(enc.stage_channels),
            "window_size": enc.window_size,
            "num_heads": enc.num_heads,
            "scale": enc.scale,
            "extra_depth": enc.extra_depth,
        },
        "network": {
            "use_tfi": setup.network.use_tfi,
            "use_sbfi": setup.network.use_sbfi,
            "use_dbfi": setup.network.use_dbfi,
        },
        "cp": None
        if setup.cp is None
        else {
            "mode": setup.cp.mode,
            "probability": setup.cp.probability,
            "rotation_range": setup.cp.rotation_range,
            "scale_range": list(setup.cp.scale_range),
            "fcp_split_index": setup.cp.fcp_split_index,
        },
        "data": {
            "root": str(setup.data_root) if setup.data_root else None,
            "crop_sizes": list(setup.aug.crop_sizes),
            "out_size": setup.aug.out_size,
            "hflip_prob": setup.aug.hflip_prob,
            "trimap_kernel": setup.aug.trimap_kernel,
        },
        "train": {
            "learning_rate": setup.train.learning_rate,
            "batch_size": setup.train.batch_size,
            "epochs": setup.train.epochs,
            "seed": setup.train.seed,
            "toy": setup.train.toy,
        },
    }


def network_from_doc(doc: dict) -> P3MNetConfig:
    """Rebuild a network config from a checkpoint's config snapshot."""
    encoder = EncoderConfig(
        variant=doc["encoder"]["variant"],
        depths=tuple(doc["encoder"]["depths"]),
        stage_channels=tuple(doc["encoder"]["stage_channels"]),
        window_size=doc["encoder"]["window_size"],
        num_heads=doc["encoder"]["num_heads"],
        scale=doc["encoder"]["scale"],
        extra_depth=doc["encoder"]["extra_depth"],
    )
    return P3MNetConfig(encoder=encoder, **doc.get("network", {}))
