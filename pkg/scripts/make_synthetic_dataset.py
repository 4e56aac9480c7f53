#!/usr/bin/env python3
"""Generate a synthetic desk-scale dataset: a training tree, both validation
trees, and a copy-paste source library.

Usage: python scripts/make_synthetic_dataset.py --out data/ [--n 16 --size 64]
"""

import argparse
from pathlib import Path

from p3m.synthetic import write_dataset_tree, write_source_library


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--n", type=int, default=16)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    root = Path(args.out)
    n_val = max(2, args.n // 4)
    write_dataset_tree(root / "train", args.n, size=args.size, seed=args.seed)
    write_dataset_tree(root / "val_p", n_val, size=args.size, seed=args.seed + 1)
    write_dataset_tree(root / "val_np", n_val, size=args.size, seed=args.seed + 2,
                       with_facemasks=False)
    write_source_library(root / "sources", max(4, args.n // 2), size=args.size,
                         seed=args.seed + 3)
    print(f"wrote train ({args.n}), val_p/val_np ({n_val} each), sources under {root}")


if __name__ == "__main__":
    main()
