"""Reproduce the bias, heterogeneity, effect-size and moderator tables.

Writes report.{json,csv,md} and one funnel SVG per factor to --out, then prints
the cell-by-cell comparison against the bundled reference values.

    python3 scripts/reproduce_tables.py --out out/reproduction
"""
import argparse
import sys

from corrmeta.cli import BUNDLED_REFERENCE, cmd_analyze, cmd_compare
from corrmeta.config import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/reproduction")
    ap.add_argument("--mapping", default="as-analysed", help="as-analysed (default) or table2")
    ap.add_argument("--nfs-variant", default="two_tailed_196")
    args = ap.parse_args()

    cfg = RunConfig(out_dir=args.out, mapping_path=args.mapping, nfs_variant=args.nfs_variant,
                    formats=("json", "csv", "md"))
    status = cmd_analyze(cfg)
    if status:
        return status
    print(f"\nartifacts written to {args.out}\n")
    return cmd_compare(cfg, BUNDLED_REFERENCE, show_all=False)


if __name__ == "__main__":
    sys.exit(main())
