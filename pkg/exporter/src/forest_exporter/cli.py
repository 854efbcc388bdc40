"""Command line for training and exporting `.forest` models."""

from __future__ import annotations

import argparse
import sys

from .exporter import ExportConfig, ExportError, train_and_export, verify_export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forest-export", description=__doc__)
    parser.add_argument("--dataset", required=True, help="CSV file")
    parser.add_argument("--label-col", required=True)
    parser.add_argument("--out", required=True,
                        help="output base path (writes <out>.forest and <out>.json)")
    parser.add_argument("--trees", type=int, default=5)
    parser.add_argument("--max-depth", type=int, default=8)
    parser.add_argument("-p", "--precision", type=int, default=8)
    parser.add_argument("--frac-bits", type=int, default=0)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--test-fraction", type=float, default=0.25)
    parser.add_argument("--verify", action="store_true",
                        help="cross-check exported predictions through the copse CLI")
    parser.add_argument("--copse-bin", default=None)
    parser.add_argument("--max-samples", type=int, default=200)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = ExportConfig(
        dataset=args.dataset,
        label_column=args.label_col,
        trees=args.trees,
        max_depth=args.max_depth,
        precision=args.precision,
        frac_bits=args.frac_bits,
        seed=args.seed,
        test_fraction=args.test_fraction,
    )
    try:
        result = train_and_export(cfg, args.out)
        print(f"wrote {result.forest_path} and {result.sidecar_path}")
        print(f"train accuracy {result.train_accuracy:.4f} "
              f"test accuracy {result.test_accuracy:.4f}")
        if args.verify:
            rate = verify_export(cfg, args.out, result,
                                 copse_bin=args.copse_bin,
                                 max_samples=args.max_samples)
            print(f"prediction match rate {rate:.4f} (recorded in sidecar)")
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
