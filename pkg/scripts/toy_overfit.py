#!/usr/bin/env python3
"""Overfit a toy-width model on a handful of synthetic samples and report the
whole-image SAD reduction, optionally with image-level copy-paste enabled.

Usage: python scripts/toy_overfit.py [--steps 500 --lr 1e-3 --icp]
"""

import argparse
import time

import numpy as np
import torch

from p3m import datapipe, metrics, p3mcp, trainer
from p3m.backbone import EncoderConfig
from p3m.p3mnet import P3MNetConfig, build_p3mnet, infer_alpha
from p3m.synthetic import make_portrait_sample


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--n", type=int, default=8)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--variant", default="resnet34",
                        choices=["resnet34", "swin_t", "vitae_s"])
    parser.add_argument("--icp", action="store_true")
    args = parser.parse_args()

    samples = []
    for i in range(args.n):
        s = make_portrait_sample(seed=900 + i, size=64)
        s["trimap"] = datapipe.trimap_from_alpha(s["alpha"], 3)
        samples.append(s)

    cfg = P3MNetConfig(encoder=EncoderConfig.preset(args.variant, scale=0.25))
    model = build_p3mnet(cfg, rng_seed=args.seed)
    opt = torch.optim.Adam(model.parameters(), lr=args.lr)

    library = cp_cfg = None
    if args.icp:
        library = p3mcp.SourceLibrary(
            [p3mcp.SourceFaceRecord(samples[0]["image"], samples[0]["facemask"])]
        )
        cp_cfg = p3mcp.CPConfig(mode="icp", probability=0.5)

    def train_sad() -> float:
        return float(np.mean(
            [metrics.sad(infer_alpha(model, s["image"]), s["alpha"]) for s in samples]
        ))

    sad0 = train_sad()
    print(f"init SAD {sad0:.4f}  ({trainer.count_parameters(model):,} params)")
    t0 = time.monotonic()
    for step in range(1, args.steps + 1):
        batch_samples = samples
        if args.icp:
            rng = np.random.default_rng([args.seed, step])
            images, _ = p3mcp.icp_apply(
                [(s["image"], s["facemask"]) for s in samples], library, rng, cp_cfg
            )
            batch_samples = [{**s, "image": img} for s, img in zip(samples, images)]
        report = trainer.train_step(model, opt, trainer.batch_to_tensors(batch_samples))
        if step % 25 == 0:
            sad = train_sad()
            print(f"step {step:4d}  loss {report.total:.4f}  SAD {sad:.4f}  "
                  f"reduction {1 - sad / sad0:.1%}  ({time.monotonic() - t0:.0f}s)")


if __name__ == "__main__":
    main()
