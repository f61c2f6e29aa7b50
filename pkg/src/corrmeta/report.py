"""Pipeline assembly, table rendering and funnel-plot SVG output."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .bias import BiasDiagnostics, FunnelPoint, diagnose_bias, funnel_points
from .config import RunConfig, display_name
from .dataset import CodedDataset, Exclusion, apply_mapping, group_by_factor
from .moderators import (
    MetaRegressionResult, ModeratorError, SubgroupEstimate, SubgroupResult, meta_regression,
    subgroup_analysis,
)
from .pooling import HeterogeneityStats, PooledEstimate, heterogeneity, pool, select_model
from .transforms import classify_magnitude, normalize_all


class AnalysisError(RuntimeError):
    pass


@dataclass(frozen=True)
class FactorSection:
    factor: str
    pooled: PooledEstimate
    het: HeterogeneityStats
    bias: BiasDiagnostics
    rule_model: str
    rule_override: bool
    magnitude: str
    funnel: tuple[FunnelPoint, ...]


@dataclass(frozen=True)
class AnalysisReport:
    dataset_summary: dict
    per_factor: tuple[FactorSection, ...]
    subgroups: tuple[SubgroupResult, ...] = ()
    meta_regressions: tuple[MetaRegressionResult, ...] = ()
    moderator_notes: tuple[str, ...] = ()
    exclusions: tuple[Exclusion, ...] = ()
    settings: dict = field(default_factory=dict)

    def section(self, factor: str) -> FactorSection:
        for s in self.per_factor:
            if s.factor == factor:
                return s
        raise KeyError(factor)

    def subgroup(self, factor: str) -> SubgroupResult:
        for s in self.subgroups:
            if s.factor == factor:
                return s
        raise KeyError(factor)

    def meta_regression(self, factor: str) -> MetaRegressionResult:
        for m in self.meta_regressions:
            if m.factor == factor:
                return m
        raise KeyError(factor)


def run_pipeline(ds: CodedDataset, config: RunConfig | None = None) -> AnalysisReport:
    """Bias -> heterogeneity -> pooling -> moderators, for each retained factor.

    Factors are ordered by descending k, ties by name. Module errors are
    re-raised as AnalysisError prefixed with the factor name; a factor whose
    effects all sit in one subgroup gets a moderator note instead of a
    subgroup result.
    """
    config = config or RunConfig()
    if not ds.mapped:
        ds = apply_mapping(ds)
    groups = group_by_factor(ds)
    if config.factors:
        groups = {f: g for f, g in groups.items() if f in config.factors}
    if not groups:
        raise AnalysisError(f"no factors meet min_k={ds.min_k}")
    order = sorted(groups, key=lambda f: (-len(groups[f]), f))

    sections, subgroups, regressions, notes = [], [], [], []
    for factor in order:
        effects = normalize_all(groups[factor])
        try:
            bias = diagnose_bias(effects, factor, config.nfs_variant)
            het = heterogeneity(effects, permissive=True)
            rule = select_model(het)
            model = rule if config.model == "auto" else config.model
            est = pool(effects, model, factor)
            points, line = funnel_points(effects, est)
        except ValueError as exc:
            raise AnalysisError(f"{factor}: {exc}") from exc
        sections.append(FactorSection(
            factor=factor, pooled=est, het=het, bias=bias, rule_model=rule,
            rule_override=model != rule, magnitude=classify_magnitude(est.r_pooled),
            funnel=tuple(points),
        ))
        if not config.moderators:
            continue
        try:
            subgroups.append(subgroup_analysis(effects, config.subgroup_key, factor))
        except ModeratorError as exc:
            notes.append(f"{factor}: subgroup analysis skipped ({exc})")
        try:
            regressions.append(meta_regression(effects, config.regression_moderator, factor))
        except ModeratorError as exc:
            notes.append(f"{factor}: meta-regression skipped ({exc})")

    summary = dict(ds.summary())
    return AnalysisReport(
        dataset_summary=summary, per_factor=tuple(sections), subgroups=tuple(subgroups),
        meta_regressions=tuple(regressions), moderator_notes=tuple(notes),
        exclusions=ds.exclusions, settings=config.settings(),
    )


# ---------------------------------------------------------------- serialization

def report_to_dict(report: AnalysisReport) -> dict:
    return asdict(report)


def report_from_dict(d: dict) -> AnalysisReport:
    def het(h):
        return None if h is None else HeterogeneityStats(**h)

    sections = []
    for s in d["per_factor"]:
        p = dict(s["pooled"])
        p["het"] = het(p["het"])
        sections.append(FactorSection(
            factor=s["factor"], pooled=PooledEstimate(**p), het=het(s["het"]),
            bias=BiasDiagnostics(**s["bias"]), rule_model=s["rule_model"],
            rule_override=s["rule_override"], magnitude=s["magnitude"],
            funnel=tuple(FunnelPoint(**fp) for fp in s["funnel"]),
        ))
    subgroups = tuple(
        SubgroupResult(**{**sg, "groups": tuple(SubgroupEstimate(**g) for g in sg["groups"])})
        for sg in d["subgroups"]
    )
    return AnalysisReport(
        dataset_summary=d["dataset_summary"], per_factor=tuple(sections), subgroups=subgroups,
        meta_regressions=tuple(MetaRegressionResult(**m) for m in d["meta_regressions"]),
        moderator_notes=tuple(d["moderator_notes"]),
        exclusions=tuple(Exclusion(**{**e, "study_ids": tuple(e["study_ids"])}) for e in d["exclusions"]),
        settings=d["settings"],
    )


def report_from_json(data: bytes | str) -> AnalysisReport:
    return report_from_dict(json.loads(data))


def fmt3(x) -> str:
    """Round half-to-even at 3 decimals, from the shortest repr of the float."""
    if isinstance(x, bool) or isinstance(x, int):
        return str(x)
    if x is None:
        return ""
    if not math.isfinite(x):
        return str(x)
    s = format(Decimal(repr(float(x))).quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN), "f")
    return "0.000" if s == "-0.000" else s


def _table3_rows(report):
    for s in report.per_factor:
        b = s.bias
        yield s.factor, {
            "k": b.k, "nfs": b.nfs, "nfs_threshold": b.nfs_threshold,
            "egger_intercept": b.egger_intercept, "egger_ci_low": b.egger_ci_low,
            "egger_ci_high": b.egger_ci_high, "egger_t": b.egger_t, "egger_p": b.egger_p,
        }, b.verdict


def _table4_rows(report):
    for s in report.per_factor:
        yield s.factor, {
            "k": s.pooled.k, "N": s.pooled.N, "Q": s.het.Q, "df": s.het.df, "p_Q": s.het.p_Q,
            "I2": s.het.I2, "tau2": s.het.tau2,
        }


def _table5_rows(report):
    for s in report.per_factor:
        p = s.pooled
        yield s.factor, p.model, {
            "r_pooled": p.r_pooled, "ci_low": p.ci_low, "ci_high": p.ci_high,
            "z_stat": p.z_stat, "p": p.p,
        }, s.magnitude


def _subgroup_rows(report):
    for sg in report.subgroups:
        for g in sg.groups:
            yield sg.factor, g.label, {
                "k": g.k, "N": g.N, "r_pooled": g.r_pooled, "ci_low": g.ci_low,
                "ci_high": g.ci_high, "z_stat": g.z_stat, "p": g.p,
            }, {"q_between": sg.q_between, "df_between": sg.df_between, "p_between": sg.p_between}


def _metareg_rows(report):
    for m in report.meta_regressions:
        yield m.factor, m.moderator, {
            "coefficient": m.coefficient, "se": m.se, "ci_low": m.ci_low, "ci_high": m.ci_high,
            "z_stat": m.z_stat, "p": m.p,
        }


def _long_rows(report):
    """(section, factor, group, metric, value) in a fixed order."""
    for f, vals, _ in _table3_rows(report):
        for m, v in vals.items():
            yield "publication_bias", f, "", m, v
    for f, vals in _table4_rows(report):
        for m, v in vals.items():
            yield "heterogeneity", f, "", m, v
    for f, _, vals, _ in _table5_rows(report):
        for m, v in vals.items():
            yield "effect_size", f, "", m, v
    for f, label, vals, between in _subgroup_rows(report):
        for m, v in vals.items():
            yield "subgroup", f, label, m, v
    for sg in report.subgroups:
        for m in ("q_between", "df_between", "p_between"):
            yield "subgroup", sg.factor, "between", m, getattr(sg, m)
    for f, mod, vals in _metareg_rows(report):
        for m, v in vals.items():
            yield "meta_regression", f, mod, m, v


def _md_table(header, rows) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return out


def render_markdown(report: AnalysisReport) -> str:
    ds = report.dataset_summary
    lines = ["# Meta-analysis report", "",
             f"Studies: {ds.get('studies')}, effects: {ds.get('effects')}, "
             f"total N: {ds.get('total_n')}, factors: {ds.get('factors')}", ""]

    lines += ["## Publication bias (fail-safe N, Egger's regression test)", ""]
    lines += _md_table(
        ["Factor", "K", "NFS", "5k+10", "Intercept", "Lower Limit", "Upper Limit", "t-Value", "p-Value", "Verdict"],
        [[display_name(f), v["k"], v["nfs"], v["nfs_threshold"], fmt3(v["egger_intercept"]),
          fmt3(v["egger_ci_low"]), fmt3(v["egger_ci_high"]), fmt3(v["egger_t"]), fmt3(v["egger_p"]), verdict]
         for f, v, verdict in _table3_rows(report)])

    lines += ["", "## Heterogeneity", ""]
    lines += _md_table(
        ["Factor", "K", "N", "Q", "df", "P", "I2", "Tau-squared"],
        [[display_name(f), v["k"], v["N"], fmt3(v["Q"]), v["df"], fmt3(v["p_Q"]), fmt3(v["I2"]), fmt3(v["tau2"])]
         for f, v in _table4_rows(report)])

    lines += ["", "## Effect sizes", ""]
    lines += _md_table(
        ["Factor", "Model", "R's Merge", "LL", "UL", "Z-Value", "p-Value", "Magnitude"],
        [[display_name(f), f"{model.capitalize()}-effects Model", fmt3(v["r_pooled"]), fmt3(v["ci_low"]),
          fmt3(v["ci_high"]), fmt3(v["z_stat"]), fmt3(v["p"]), mag]
         for f, model, v, mag in _table5_rows(report)])

    if report.subgroups or report.meta_regressions:
        lines += ["", "## Moderator analyses"]
    if report.subgroups:
        key = report.subgroups[0].key
        lines += ["", f"### Subgroups by {key}", ""]
        lines += _md_table(
            ["Factor", "Subgroup", "K", "N", "R's Merge", "LL", "UL", "Z-Value", "P-Value", "QB", "DF", "P"],
            [[display_name(f), label.capitalize(), v["k"], v["N"], fmt3(v["r_pooled"]), fmt3(v["ci_low"]),
              fmt3(v["ci_high"]), fmt3(v["z_stat"]), fmt3(v["p"]), fmt3(b["q_between"]), b["df_between"],
              fmt3(b["p_between"])]
             for f, label, v, b in _subgroup_rows(report)])
    if report.meta_regressions:
        mod = report.meta_regressions[0].moderator
        lines += ["", f"### Meta-regression on {mod}", ""]
        lines += _md_table(
            ["Factor", "Regression Coefficient", "Standard Error", "LL", "UL", "Z-Value", "Two-Tailed Significance"],
            [[display_name(f), fmt3(v["coefficient"]), fmt3(v["se"]), fmt3(v["ci_low"]), fmt3(v["ci_high"]),
              fmt3(v["z_stat"]), fmt3(v["p"])]
             for f, _, v in _metareg_rows(report)])
    if report.moderator_notes:
        lines += [""] + [f"- {n}" for n in report.moderator_notes]

    overrides = [s for s in report.per_factor if s.rule_override]
    if overrides:
        lines += ["", "## Model rule overrides", ""]
        lines += [f"- {display_name(s.factor)}: heterogeneity rule selects {s.rule_model}, "
                  f"report uses {s.pooled.model}" for s in overrides]

    if report.exclusions:
        lines += ["", "## Exclusions", ""]
        lines += [f"- {e.name}: {e.reason} (k={e.k}; {', '.join(e.study_ids)})" for e in report.exclusions]

    lines += ["", "## Settings", ""]
    lines += [f"- {k}: {json.dumps(v, sort_keys=True)}" for k, v in sorted(report.settings.items())]
    return "\n".join(lines) + "\n"


def render_csv(report: AnalysisReport) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["section", "factor", "group", "metric", "value"])
    for sec, f, g, m, v in _long_rows(report):
        w.writerow([sec, f, g, m, fmt3(v)])
    return out.getvalue()


def render_json(report: AnalysisReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def render_tables(report: AnalysisReport, format: str) -> bytes:
    if format == "json":
        return render_json(report).encode("utf-8")
    if format == "csv":
        return render_csv(report).encode("utf-8")
    if format in ("md", "markdown"):
        return render_markdown(report).encode("utf-8")
    raise ValueError(f"unknown format {format!r}")


def format_summary(report: AnalysisReport) -> str:
    """Plain-text effect-size table for the terminal."""
    rows = [("Factor", "Model", "k", "r", "LL", "UL", "Z", "p")]
    for f, model, v, _ in _table5_rows(report):
        rows.append((display_name(f), model, str(report.section(f).pooled.k), fmt3(v["r_pooled"]),
                     fmt3(v["ci_low"]), fmt3(v["ci_high"]), fmt3(v["z_stat"]), fmt3(v["p"])))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(wd) if i < 2 else c.rjust(wd) for i, (c, wd) in enumerate(zip(r, widths)))
                     for r in rows) + "\n"


# ---------------------------------------------------------------- funnel plot

def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    span = hi - lo
    raw = span / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    t = start
    while t <= hi + 1e-9:
        ticks.append(round(t, 10))
        t += step
    return ticks


def funnel_svg(points: Sequence[FunnelPoint], pooled_z: float, title: str = "") -> str:
    """Standalone funnel plot: Fisher z across, standard error down (0 at top)."""
    if not points:
        raise ValueError("funnel plot needs at least one point")
    W, H = 480, 400
    left, right, top, bottom = 64, 20, 40, 52
    pw, ph = W - left - right, H - top - bottom
    se_max = max(p.se for p in points) * 1.1
    half = 1.96 * se_max
    xs = [p.z for p in points] + [pooled_z - half, pooled_z + half]
    xlo, xhi = min(xs), max(xs)
    pad = 0.05 * (xhi - xlo) or 0.1
    xlo, xhi = xlo - pad, xhi + pad

    def X(z):
        return left + (z - xlo) / (xhi - xlo) * pw

    def Y(se):
        return top + se / se_max * ph

    f = "{:.2f}".format
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.2f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(xlo, xhi):
        out.append(f'<line class="xtick" x1="{f(X(t))}" y1="{top + ph}" x2="{f(X(t))}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{f(X(t))}" y="{top + ph + 18}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{t:.2f}</text>')
    for t in _ticks(0.0, se_max, 4):
        out.append(f'<line class="ytick" x1="{left - 5}" y1="{f(Y(t))}" x2="{left}" y2="{f(Y(t))}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{f(Y(t) + 3)}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{t:.3f}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">Fisher\'s Z</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.2f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {top + ph / 2:.2f})">Standard Error</text>')
    for sign in (-1, 1):
        out.append(f'<line class="guide" x1="{f(X(pooled_z))}" y1="{f(Y(0))}" x2="{f(X(pooled_z + sign * half))}" '
                   f'y2="{f(Y(se_max))}" stroke="gray" stroke-dasharray="4 3"/>')
    out.append(f'<line class="pooled-line" x1="{f(X(pooled_z))}" y1="{top}" x2="{f(X(pooled_z))}" '
               f'y2="{top + ph}" stroke="black"/>')
    for p in points:
        out.append(f'<circle class="point" cx="{f(X(p.z))}" cy="{f(Y(p.se))}" r="4" fill="white" stroke="black">'
                   f'<title>{escape(p.study_id)}</title></circle>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_funnel_svg(points: Sequence[FunnelPoint], pooled_z: float, out: str | Path, title: str = "") -> Path:
    out = Path(out)
    out.write_text(funnel_svg(points, pooled_z, title), encoding="utf-8")
    return out


def write_report(report: AnalysisReport, out_dir: str | Path, formats: Sequence[str] = ("json", "md"),
                 funnels: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        path = out_dir / f"report.{fmt}"
        path.write_bytes(render_tables(report, fmt))
        written.append(path)
    if funnels:
        for s in report.per_factor:
            written.append(emit_funnel_svg(s.funnel, s.pooled.z_pooled, out_dir / f"funnel_{s.factor}.svg",
                                           title=display_name(s.factor)))
    return written
