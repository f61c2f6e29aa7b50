"""Command-line entry point: validate, analyze, compare."""
from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .config import FORMATS, MODELS, RunConfig
from .bias import NFS_CRITICAL
from .dataset import BUNDLED_MAPPINGS, DatasetError, apply_mapping, bundled_path, parse_dataset
from .report import AnalysisError, AnalysisReport, format_summary, run_pipeline, write_report

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_ANALYSIS = 2
EXIT_COMPARISON = 3

KNOWN_DISCREPANCY = "known-discrepancy"
BUNDLED_REFERENCE = "bundled:reference_tables.csv"


def resolve_data_path(path: str) -> Path:
    if path.startswith("bundled:"):
        return bundled_path(path.split(":", 1)[1])
    return Path(path)


def load(config: RunConfig):
    """Parse and map the dataset, warning on stderr about unmapped names."""
    ds = apply_mapping(parse_dataset(resolve_data_path(config.data_path), config.mapping_path, config.min_k))
    for e in ds.exclusions:
        if e.reason == "unmapped":
            print(f"warning: raw factor {e.name!r} has no canonical factor; excluded ({', '.join(e.study_ids)})",
                  file=sys.stderr)
    return ds


def analyze(config: RunConfig) -> AnalysisReport:
    return run_pipeline(load(config), config)


def cmd_validate(config: RunConfig) -> int:
    try:
        ds = load(config)
    except (DatasetError, OSError) as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    s = ds.summary()
    print(f"{s['effects']} effects, {s['factors']} factors")
    print(f"{s['studies']} studies, total N {s['total_n']}")
    for e in ds.exclusions:
        print(f"excluded {e.name}: {e.reason} (k={e.k})")
    return EXIT_OK


def cmd_analyze(config: RunConfig) -> int:
    try:
        ds = load(config)
    except (DatasetError, OSError) as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        report = run_pipeline(ds, config)
    except (AnalysisError, ValueError) as exc:
        print(f"analysis failed: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    write_report(report, config.out_dir, config.formats)
    sys.stdout.write(format_summary(report))
    for s in report.per_factor:
        if s.rule_override:
            print(f"note: {s.factor} uses {s.pooled.model} effects; heterogeneity rule selects {s.rule_model}")
    return EXIT_OK


# ---------------------------------------------------------------- compare

@dataclass(frozen=True)
class ReferenceCell:
    table: int
    factor: str
    metric: str
    expected: float
    abs_tol: float
    note: str

    @property
    def known_discrepancy(self) -> bool:
        return self.note.startswith(KNOWN_DISCREPANCY)


@dataclass(frozen=True)
class CellResult:
    cell: ReferenceCell
    computed: float | None

    @property
    def delta(self) -> float | None:
        return None if self.computed is None else abs(self.computed - self.cell.expected)

    @property
    def ok(self) -> bool:
        # tiny slack so a tolerance equal to the printed rounding is not lost to float noise
        return self.delta is not None and self.delta <= self.cell.abs_tol + 1e-9


def read_reference(path: str | Path) -> list[ReferenceCell]:
    p = resolve_data_path(str(path))
    with open(p, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    need = {"table", "factor", "metric", "expected", "abs_tol", "note"}
    if not rows or not need <= set(rows[0]):
        raise DatasetError(f"{p}: reference file needs columns {sorted(need)}")
    return [ReferenceCell(int(r["table"]), r["factor"], r["metric"], float(r["expected"]),
                          float(r["abs_tol"]), r["note"] or "") for r in rows]


def report_value(report: AnalysisReport, table: int, factor: str, metric: str) -> float | None:
    """Look up the computed value behind one reference cell; None if absent."""
    try:
        if table == 3:
            b = report.section(factor).bias
            if metric == "egger_abs_t":
                return abs(b.egger_t)
            if metric == "nfs_exceeds_threshold":
                return float(b.nfs >= b.nfs_threshold)
            if metric == "egger_p_above_05":
                return float(b.egger_p > 0.05)
            return float(getattr(b, metric))
        if table == 4:
            s = report.section(factor)
            if metric in ("k", "N"):
                return float(getattr(s.pooled, metric))
            return float(getattr(s.het, metric))
        if table == 5:
            return float(getattr(report.section(factor).pooled, metric))
        if table == 6:
            name, _, label = factor.partition("/")
            sg = report.subgroup(name)
            if not label:
                return float(getattr(sg, metric))
            for g in sg.groups:
                if g.label == label:
                    return float(getattr(g, metric))
            return None
        if table == 7:
            return float(getattr(report.meta_regression(factor), metric))
    except (KeyError, AttributeError):
        return None
    return None


def compare(report: AnalysisReport, cells: Sequence[ReferenceCell], include_known: bool = False,
            tables: Sequence[int] = ()) -> tuple[list[CellResult], list[CellResult]]:
    """Return (checked, skipped) cell results."""
    checked, skipped = [], []
    for c in cells:
        if tables and c.table not in tables:
            continue
        res = CellResult(c, report_value(report, c.table, c.factor, c.metric))
        (checked if include_known or not c.known_discrepancy else skipped).append(res)
    return checked, skipped


def _fmt(x) -> str:
    if x is None:
        return "missing"
    if math.isfinite(x) and x == int(x) and abs(x) < 1e9:
        return str(int(x))
    return f"{x:.4f}"


def cmd_compare(config: RunConfig, reference_path: str, include_known: bool = False,
                tables: Sequence[int] = (), show_all: bool = False) -> int:
    try:
        ds = load(config)
        cells = read_reference(reference_path)
    except (DatasetError, OSError) as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        report = run_pipeline(ds, config)
    except (AnalysisError, ValueError) as exc:
        print(f"analysis failed: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    if config.factors:
        keep = set(config.factors)
        cells = [c for c in cells if c.factor.partition("/")[0] in keep]
    checked, skipped = compare(report, cells, include_known, tables)
    bad = [r for r in checked if not r.ok]
    missing = [r for r in bad if r.computed is None]
    shown = checked if show_all else bad
    if shown:
        print(f"{'table':>5}  {'factor':<34} {'metric':<22} {'computed':>10} {'expected':>10} "
              f"{'|delta|':>9} {'tol':>8}  status")
    for r in shown:
        c = r.cell
        status = "ok" if r.ok else ("MISSING" if r.computed is None else "FAIL")
        print(f"{c.table:>5}  {c.factor:<34} {c.metric:<22} {_fmt(r.computed):>10} {_fmt(c.expected):>10} "
              f"{_fmt(r.delta):>9} {_fmt(c.abs_tol):>8}  {status}")
    for r in skipped:
        c = r.cell
        print(f"skipped {c.table}/{c.factor}/{c.metric}: computed {_fmt(r.computed)}, "
              f"expected {_fmt(c.expected)} ({c.note})")
    print(f"{len(checked) - len(bad)}/{len(checked)} cells within tolerance, "
          f"{len(missing)} missing, {len(skipped)} known discrepancies skipped")
    return EXIT_OK if not bad else EXIT_COMPARISON


# ---------------------------------------------------------------- argparse

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default="bundled:studies.csv", help="coded study CSV (default: bundled fixture)")
    p.add_argument("--mapping", default="as-analysed",
                   help=f"factor mapping CSV or bundled name {sorted(BUNDLED_MAPPINGS)} (default: as-analysed)")
    p.add_argument("--min-k", type=int, default=3, help="minimum effects per factor (default: 3)")
    p.add_argument("--factor", action="append", default=[], help="restrict to a factor (repeatable)")


def _add_analysis(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=MODELS, default="auto")
    p.add_argument("--nfs-variant", choices=sorted(NFS_CRITICAL), default="two_tailed_196")
    p.add_argument("--no-moderators", action="store_true", help="skip subgroup and meta-regression analyses")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corrmeta", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and check the coded dataset")
    _add_common(p)

    p = sub.add_parser("analyze", help="run the full pipeline and write report artifacts")
    _add_common(p)
    _add_analysis(p)
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--formats", default="json,md", help=f"comma-separated subset of {','.join(FORMATS)}")

    p = sub.add_parser("compare", help="diff computed tables against a reference file")
    _add_common(p)
    _add_analysis(p)
    p.add_argument("--reference", default=BUNDLED_REFERENCE, help="reference CSV (default: bundled tables)")
    p.add_argument("--table", type=int, action="append", default=[], help="restrict to a table number")
    p.add_argument("--include-known-discrepancies", action="store_true",
                   help="also check cells annotated as known discrepancies")
    p.add_argument("--all", action="store_true", help="print every checked cell, not only failures")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    kw = dict(data_path=args.data, mapping_path=args.mapping, min_k=args.min_k, factors=tuple(args.factor))
    if hasattr(args, "model"):
        kw.update(model=args.model, nfs_variant=args.nfs_variant, moderators=not args.no_moderators)
    if hasattr(args, "out"):
        kw.update(out_dir=args.out, formats=tuple(f for f in args.formats.split(",") if f))
    return RunConfig(**kw)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except ValueError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.command == "validate":
        return cmd_validate(config)
    if args.command == "analyze":
        return cmd_analyze(config)
    return cmd_compare(config, args.reference, args.include_known_discrepancies, args.table, args.all)


if __name__ == "__main__":
    sys.exit(main())
