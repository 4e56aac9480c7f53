#!/usr/bin/env python3
"""Print the parameter count of every module-toggle combination, at full
scale and toy scale, for any backbone variant.

Usage: python scripts/ablation_params.py [--variant resnet34 --scale 1.0]
"""

import argparse

from p3m.backbone import EncoderConfig
from p3m.p3mnet import P3MNetConfig, build_p3mnet
from p3m.trainer import count_parameters

ROWS = [
    ("BASIC", dict(use_tfi=False, use_sbfi=False, use_dbfi=False)),
    ("+TFI", dict(use_tfi=True, use_sbfi=False, use_dbfi=False)),
    ("+TFI +sBFI", dict(use_tfi=True, use_sbfi=True, use_dbfi=False)),
    ("+TFI +dBFI", dict(use_tfi=True, use_sbfi=False, use_dbfi=True)),
    ("full", dict(use_tfi=True, use_sbfi=True, use_dbfi=True)),
]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--variant", default="resnet34",
                        choices=["resnet34", "swin_t", "vitae_s"])
    parser.add_argument("--scale", type=float, default=1.0)
    args = parser.parse_args()

    enc = EncoderConfig.preset(args.variant, scale=args.scale)
    print(f"{args.variant} @ scale {args.scale}")
    for label, toggles in ROWS:
        model = build_p3mnet(P3MNetConfig(encoder=enc, **toggles), 0)
        n = count_parameters(model)
        print(f"  {label:<12} {n:>12,}  ({n / 1e6:.2f}M)")


if __name__ == "__main__":
    main()
