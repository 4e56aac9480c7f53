"""Single entry point for the pipelines.

Subcommands: obfuscate, make-trimaps, train, eval, infer, cp-preview,
report. Every command runs headless, is deterministic given --seed, and
exits 0 on success, 1 on runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import anonymize, core, datapipe, metrics, p3mcp, synthetic, trainer
from .checkpoint import load_checkpoint
from .config import load_config, network_from_doc, setup_to_doc
from .errors import P3mError
from .p3mnet import build_p3mnet


def _cmd_obfuscate(args) -> int:
    cfg = anonymize.ObfuscationConfig(
        method=args.method,
        blur_sigma_fraction=args.sigma_fraction,
        mosaic_cell_fraction=args.cell_fraction,
    )
    stems = anonymize.obfuscate_tree(args.in_dir, args.out, cfg, args.seed)
    print(f"obfuscated {len(stems)} images -> {args.out}")
    return 0


def _cmd_make_trimaps(args) -> int:
    stems = datapipe.materialize_trimaps(args.data, args.kernel)
    print(f"wrote {len(stems)} trimaps under {Path(args.data) / 'trimap'}")
    return 0


def _cmd_train(args) -> int:
    from dataclasses import replace

    setup = load_config(args.config)
    train_cfg = setup.train
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    if args.out is not None:
        train_cfg = replace(train_cfg, out_dir=args.out)
    net_cfg, aug_cfg = setup.network, setup.aug
    if train_cfg.toy:
        net_cfg, train_cfg, aug_cfg = trainer.apply_toy_overrides(net_cfg, train_cfg, aug_cfg)
    if setup.data_root is None:
        raise P3mError("config has no data.root and P3M_DATA_ROOT is unset")
    records = datapipe.scan_dataset(setup.data_root, datapipe.SPLIT_TRAIN)
    dataset = datapipe.MattingDataset(records, aug_cfg, seed=train_cfg.seed)
    library = p3mcp.SourceLibrary.from_dir(setup.source_dir) if setup.source_dir else None
    result = trainer.fit(
        net_cfg,
        train_cfg,
        dataset,
        aug_cfg=aug_cfg,
        cp_cfg=setup.cp,
        source_library=library,
        val_p_dir=setup.val_p_dir,
        val_np_dir=setup.val_np_dir,
        config_doc=setup_to_doc(setup),
    )
    print(f"trained {len(result.loss_history)} steps; checkpoints: "
          f"{[str(p) for p in result.checkpoint_paths]}")
    return 0


def _cmd_eval(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    agg = metrics.evaluate_directory(
        args.pred, args.gt, args.trimap, csv_path=out_dir / "per_image.csv"
    )
    metrics.write_aggregate_json(agg, out_dir / "aggregate.json", resolution="native ground-truth")
    print(json.dumps(agg.as_row(), indent=2))
    return 0


def _cmd_infer(args) -> int:
    config, state_dict, _, _ = load_checkpoint(args.checkpoint)
    model = build_p3mnet(network_from_doc(config), rng_seed=args.seed)
    model.load_state_dict(state_dict)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = 0
    for img_path in sorted(Path(args.in_dir).iterdir()):
        if img_path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        image = core.load_raster(img_path, "image")
        alpha = trainer.infer_alpha_any_size(model, image)
        core.save_raster(out_dir / f"{img_path.stem}.png", alpha, "alpha")
        n += 1
    print(f"wrote {n} alpha mattes -> {out_dir}")
    return 0


def _cmd_cp_preview(args) -> int:
    records = datapipe.scan_dataset(args.data, datapipe.SPLIT_TRAIN)
    library = p3mcp.SourceLibrary.from_dir(args.sources)
    cfg = p3mcp.CPConfig(mode=p3mcp.MODE_ICP, probability=1.0)
    rng = np.random.default_rng(args.seed)
    rows = []
    for rec in records[: args.n]:
        image = core.load_raster(rec.image_path, "image")
        facemask = core.load_raster(rec.facemask_path, "mask") if rec.facemask_path else None
        (merged,), _ = p3mcp.icp_apply([(image, facemask)], library, rng, cfg)
        source = library.records[0].image
        h = max(image.shape[0], source.shape[0])
        panels = []
        for panel in (image, source, merged):
            pad = np.ones((h, panel.shape[1], 3), dtype=np.float32)
            pad[: panel.shape[0]] = panel
            panels.append(pad)
        rows.append(np.concatenate(panels, axis=1))
    width = max(r.shape[1] for r in rows)
    grid = np.concatenate(
        [np.pad(r, ((0, 0), (0, width - r.shape[1]), (0, 0)), constant_values=1.0) for r in rows],
        axis=0,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    core.save_raster(out, grid, "image")
    print(f"wrote preview grid ({len(rows)} rows) -> {out}")
    return 0


def _cmd_report(args) -> int:
    rows = []
    for csv_path in sorted(Path(args.in_dir).glob("*.csv")):
        with open(csv_path, newline="", encoding="utf-8") as f:
            rows.extend(csv.DictReader(f))
    if not rows:
        raise P3mError(f"no per-image CSVs under {args.in_dir}")
    agg = {
        col: float(np.mean([float(r[col]) for r in rows])) for col in metrics.MetricReport.COLUMNS
    }
    doc = {"images": len(rows), "metrics": agg}
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    print(json.dumps(doc, indent=2))
    return 0


def _cmd_make_fixtures(args) -> int:
    stems = synthetic.write_dataset_tree(args.out, args.n, size=args.size, seed=args.seed)
    if args.sources:
        synthetic.write_source_library(args.sources, max(2, args.n // 2), size=args.size, seed=args.seed + 1)
    print(f"wrote {len(stems)} synthetic samples -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p3m", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("obfuscate", help="anonymize faces in a dataset tree")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["blur", "mosaic", "zero"], default="blur")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-fraction", type=float, default=0.08)
    p.add_argument("--cell-fraction", type=float, default=0.1)
    p.set_defaults(func=_cmd_obfuscate)

    p = sub.add_parser("make-trimaps", help="materialize trimaps from GT alphas")
    p.add_argument("--data", required=True)
    p.add_argument("--kernel", type=int, default=25)
    p.set_defaults(func=_cmd_make_trimaps)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=0)
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score predicted alphas against GT")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--trimap", required=True)
    p.add_argument("--out", default="eval_out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="predict alphas with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("cp-preview", help="write copy-paste merge grids for audit")
    p.add_argument("--data", required=True)
    p.add_argument("--sources", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_cp_preview)

    p = sub.add_parser("report", help="merge per-image CSVs into an aggregate")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("make-fixtures", help="generate a synthetic dataset tree")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sources", default=None)
    p.set_defaults(func=_cmd_make_fixtures)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except P3mError as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
