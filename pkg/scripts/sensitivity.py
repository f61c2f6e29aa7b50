"""Sensitivity of the headline results to the analysis choices left open.

Varies the merge table (verbatim vs as-analysed) and the fail-safe N critical
value, and prints pooled r, tau^2 and fail-safe N per factor for each setting.
"""
import argparse
import itertools

from corrmeta.cli import load
from corrmeta.config import RunConfig, display_name
from corrmeta.report import fmt3, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--factor", action="append", default=[])
    args = ap.parse_args()

    rows = []
    for mapping, variant in itertools.product(("as-analysed", "table2"), ("two_tailed_196", "one_tailed_1645")):
        cfg = RunConfig(mapping_path=mapping, nfs_variant=variant, factors=tuple(args.factor), moderators=False)
        rep = run_pipeline(load(cfg), cfg)
        for s in rep.per_factor:
            rows.append((display_name(s.factor), mapping, variant, str(s.pooled.k), fmt3(s.pooled.r_pooled),
                         fmt3(s.het.tau2), str(s.bias.nfs)))
    head = ("factor", "mapping", "nfs variant", "k", "r", "tau2", "NFS")
    widths = [max(len(r[i]) for r in rows + [head]) for i in range(len(head))]
    for r in [head] + sorted(rows):
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())


if __name__ == "__main__":
    main()
