import json
import xml.etree.ElementTree as ET

import pytest

from corrmeta.bias import FunnelPoint
from corrmeta.cli import EXIT_ANALYSIS, EXIT_COMPARISON, EXIT_OK, EXIT_VALIDATION, main
from corrmeta.config import RunConfig, canonical_factor
from corrmeta.dataset import COLUMNS, apply_mapping, parse_dataset
from corrmeta.report import (
    AnalysisError, funnel_svg, fmt3, render_tables, report_from_json, run_pipeline,
)

SVG = "{http://www.w3.org/2000/svg}"


def classed(root, cls):
    return [el for el in root.iter() if el.get("class") == cls]


def test_pipeline_sections(report):
    assert len(report.per_factor) == 8
    ks = [s.pooled.k for s in report.per_factor]
    assert ks == sorted(ks, reverse=True)
    assert len(report.subgroups) == 8 and len(report.meta_regressions) == 8
    assert all(s.pooled.model == "random" and not s.rule_override for s in report.per_factor)


def test_empty_dataset(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text(",".join(COLUMNS) + "\n")
    with pytest.raises(AnalysisError, match="no factors meet min_k"):
        run_pipeline(apply_mapping(parse_dataset(p)))


def test_factor_filter_and_override(dataset):
    rep = run_pipeline(dataset, RunConfig(factors=("habit",), model="fixed"))
    assert [s.factor for s in rep.per_factor] == ["Habit"]
    s = rep.per_factor[0]
    assert s.rule_override and s.rule_model == "random" and s.pooled.model == "fixed"
    assert "Model rule overrides" in render_tables(rep, "md").decode()


def test_markdown_columns(report):
    md = render_tables(report, "md").decode()
    assert "| Factor | Model | R's Merge | LL | UL | Z-Value | p-Value | Magnitude |" in md
    assert "Moderator analyses" in md


def test_no_moderator_block(dataset):
    md = render_tables(run_pipeline(dataset, RunConfig(moderators=False)), "md").decode()
    assert "Moderator" not in md and "Subgroup" not in md


def test_json_round_trip(report):
    data = render_tables(report, "json")
    back = report_from_json(data)
    assert back == report
    assert render_tables(back, "json") == data


def test_csv_long_format(report):
    lines = render_tables(report, "csv").decode().splitlines()
    assert lines[0] == "section,factor,group,metric,value"
    assert "effect_size,PerformanceExpectancy,,r_pooled,0.389" in lines


def test_unknown_format(report):
    with pytest.raises(ValueError):
        render_tables(report, "xlsx")


@pytest.mark.parametrize("x, s", [(0.0005, "0.000"), (0.0015, "0.002"), (0.0025, "0.002"), (-0.0001, "0.000"),
                                  (12.2385, "12.238"), (7, "7")])
def test_fmt3_half_even(x, s):
    assert fmt3(x) == s


def test_svg_single_point():
    root = ET.fromstring(funnel_svg([FunnelPoint(0.3, 0.1, "a")], 0.3))
    pt, = classed(root, "point")
    line, = classed(root, "pooled-line")
    assert pt.get("cx") == line.get("x1") == line.get("x2")
    assert len(classed(root, "guide")) == 2


def test_svg_mirrored_points():
    root = ET.fromstring(funnel_svg([FunnelPoint(-0.4, 0.1, "a"), FunnelPoint(0.4, 0.1, "b")], 0.0))
    xs = sorted(float(p.get("cx")) for p in classed(root, "point"))
    line = float(classed(root, "pooled-line")[0].get("x1"))
    assert line == pytest.approx((xs[0] + xs[1]) / 2, abs=0.01)


def test_svg_standalone(report):
    s = report.section("PerformanceExpectancy")
    text = funnel_svg(s.funnel, s.pooled.z_pooled, "PE")
    root = ET.fromstring(text)
    assert len(classed(root, "point")) == 19
    assert "href" not in text and "http://www.w3.org/2000/svg" in text
    labels = [t.text for t in root.iter(SVG + "text")]
    assert "Fisher's Z" in labels and "Standard Error" in labels
    # larger se sits lower
    pts = sorted(s.funnel, key=lambda p: p.se)
    cy = {c.find(SVG + "title").text: float(c.get("cy")) for c in classed(root, "point")}
    assert cy[pts[0].study_id] <= cy[pts[-1].study_id]


def test_canonical_factor():
    assert canonical_factor("perceived-cost") == "PerceivedCost"
    with pytest.raises(ValueError):
        canonical_factor("anxiety")


# ---------------------------------------------------------------- CLI

def test_validate(capsys):
    assert main(["validate", "--mapping", "table2"]) == EXIT_OK
    assert "87 effects, 8 factors" in capsys.readouterr().out
    assert main(["validate"]) == EXIT_OK
    assert "88 effects, 8 factors" in capsys.readouterr().out


def test_validate_bad_row(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text(",".join(COLUMNS) + "\nS01,A,2023,journal,Peru,developing,3,50,habit,0.3,regression_beta\n")
    assert main(["validate", "--data", str(p)]) == EXIT_VALIDATION
    assert "row 2" in capsys.readouterr().err


def test_validate_unmapped_warns(tmp_path, capsys):
    p = tmp_path / "d.csv"
    p.write_text(",".join(COLUMNS) + "\nS01,A,2023,journal,Peru,developing,30,50,technology anxiety,0.3,"
                 "regression_beta\n")
    assert main(["validate", "--data", str(p)]) == EXIT_OK
    assert "technology anxiety" in capsys.readouterr().err


def test_analyze_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["analyze", "--out", str(out)]) == EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert names[-2:] == ["report.json", "report.md"]
    assert len([n for n in names if n.startswith("funnel_")]) == 8
    assert "Performance Expectancy" in capsys.readouterr().out
    json.loads((out / "report.json").read_text())


def test_analyze_factor_filter(tmp_path):
    out = tmp_path / "o"
    assert main(["analyze", "--out", str(out), "--factor", "habit", "--formats", "json"]) == EXIT_OK
    rep = report_from_json((out / "report.json").read_bytes())
    assert [s.factor for s in rep.per_factor] == ["Habit"]
    assert sorted(p.name for p in out.iterdir()) == ["funnel_Habit.svg", "report.json"]


def test_analyze_fixed_override(tmp_path, capsys):
    assert main(["analyze", "--out", str(tmp_path), "--factor", "Attitude", "--model", "fixed"]) == EXIT_OK
    assert "heterogeneity rule selects random" in capsys.readouterr().out
    assert report_from_json((tmp_path / "report.json").read_bytes()).per_factor[0].rule_override


def test_analyze_errors(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text(",".join(COLUMNS) + "\n")
    assert main(["analyze", "--data", str(p), "--out", str(tmp_path)]) == EXIT_ANALYSIS
    assert main(["analyze", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert main(["analyze", "--factor", "anxiety", "--out", str(tmp_path)]) == EXIT_VALIDATION


def test_compare_bundled(capsys):
    assert main(["compare"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "skipped 3/Attitude/egger_p" in out
    assert main(["compare", "--include-known-discrepancies"]) == EXIT_COMPARISON


def test_compare_table5_pooled_r(capsys):
    assert main(["compare", "--table", "5"]) == EXIT_OK


def test_compare_perturbed(tmp_path, capsys):
    from corrmeta.dataset import bundled_path
    lines = bundled_path("reference_tables.csv").read_text().splitlines()
    i = next(i for i, l in enumerate(lines) if l.startswith("5,Habit,r_pooled,"))
    parts = lines[i].split(",")
    parts[3] = repr(float(parts[3]) + 1.0)
    lines[i] = ",".join(parts)
    ref = tmp_path / "ref.csv"
    ref.write_text("\n".join(lines) + "\n")
    assert main(["compare", "--reference", str(ref)]) == EXIT_COMPARISON
    out = capsys.readouterr().out
    fails = [l for l in out.splitlines() if l.endswith("FAIL")]
    assert len(fails) == 1 and "Habit" in fails[0] and "r_pooled" in fails[0]


def test_compare_missing_cell(tmp_path, capsys):
    ref = tmp_path / "ref.csv"
    ref.write_text("table,factor,metric,expected,abs_tol,note\n5,Anxiety,r_pooled,0.1,0.01,\n")
    assert main(["compare", "--reference", str(ref)]) == EXIT_COMPARISON
    assert "MISSING" in capsys.readouterr().out
