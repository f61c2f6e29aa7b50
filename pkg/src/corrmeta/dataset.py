"""Coded study dataset: parsing, validation, factor mapping and grouping."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable

logger = logging.getLogger(__name__)

COLUMNS = (
    "study_id", "first_author", "year", "pub_type", "region", "region_class",
    "n", "male_pct", "raw_factor", "effect_value", "effect_metric",
)
PUB_TYPES = ("journal", "conference")
REGION_CLASSES = ("developed", "developing")
EFFECT_METRICS = ("correlation_r", "regression_beta")

CANONICAL_FACTORS = (
    "PerformanceExpectancy",
    "EffortExpectancy",
    "SocialInfluence",
    "Attitude",
    "FacilitatingConditions",
    "HedonicMotivation",
    "PerceivedCost",
    "Habit",
)

FACTOR_DESCRIPTIONS = {
    "PerformanceExpectancy": "The extent to which students believe that using GenAI will help them progress academically",
    "EffortExpectancy": "The ease with which students use GenAI",
    "SocialInfluence": "The extent to which important others (e.g., family, teachers, friends) think students should use GenAI",
    "Attitude": "Students' overall evaluation and sentiment tendency towards using GenAI",
    "FacilitatingConditions": "The extent to which students believe that organisational and technical infrastructure exists to support using GenAI",
    "HedonicMotivation": "Students' tendency to use GenAI because of the pleasure that occurs during using GenAI",
    "PerceivedCost": "The costs (e.g., time, money or other resources) that students expect to incur in using GenAI",
    "Habit": "Students' tendency to use GenAI as a result of previous experience and repetitive usage",
}

# bundled mapping names accepted wherever a mapping path is expected
BUNDLED_MAPPINGS = {
    "table2": "factor_mapping.csv",
    "as-analysed": "factor_mapping_as_analysed.csv",
}
DEFAULT_MIN_K = 3


class DatasetError(ValueError):
    """Base class for dataset problems."""


class ParseError(DatasetError):
    pass


class ValidationError(DatasetError):
    pass


def normalize_name(name: str) -> str:
    """Case-fold a variable name and collapse whitespace and apostrophe variants."""
    name = name.replace("’", "'").replace("‘", "'")
    return " ".join(name.lower().split())


def bundled_path(filename: str) -> Path:
    return Path(str(resources.files("corrmeta") / "data" / filename))


def resolve_mapping_path(mapping: str | Path | None) -> Path:
    if mapping is None:
        mapping = "as-analysed"
    if str(mapping) in BUNDLED_MAPPINGS:
        return bundled_path(BUNDLED_MAPPINGS[str(mapping)])
    return Path(mapping)


@dataclass(frozen=True)
class StudyEffect:
    study_id: str
    first_author: str
    year: int
    pub_type: str
    region: str
    region_class: str
    n: int
    male_pct: float
    raw_factor: str
    effect_value: float
    effect_metric: str
    factor: str | None = None

    def __post_init__(self):
        if self.n < 4:
            raise ValidationError(f"{self.study_id}/{self.raw_factor}: n={self.n} < 4")
        if not 0 <= self.male_pct <= 100:
            raise ValidationError(f"{self.study_id}/{self.raw_factor}: male_pct={self.male_pct} outside [0, 100]")
        if self.pub_type not in PUB_TYPES:
            raise ValidationError(f"{self.study_id}: unknown pub_type {self.pub_type!r}")
        if self.region_class not in REGION_CLASSES:
            raise ValidationError(f"{self.study_id}: unknown region_class {self.region_class!r}")
        if self.effect_metric not in EFFECT_METRICS:
            raise ValidationError(f"{self.study_id}: unknown effect_metric {self.effect_metric!r}")
        if not math.isfinite(self.effect_value):
            raise ValidationError(f"{self.study_id}/{self.raw_factor}: non-finite effect value")
        if self.effect_metric == "correlation_r" and not -1 < self.effect_value < 1:
            raise ValidationError(
                f"{self.study_id}/{self.raw_factor}: correlation {self.effect_value} outside (-1, 1)")

    @property
    def key(self) -> tuple[str, str]:
        return (self.study_id, normalize_name(self.raw_factor))


@dataclass(frozen=True)
class FactorMapping:
    canonical_factor: str
    raw_names: frozenset[str]
    description: str = ""


@dataclass(frozen=True)
class Exclusion:
    """A raw variable or a whole factor left out of the analysis."""
    name: str
    reason: str
    k: int
    study_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class CodedDataset:
    effects: tuple[StudyEffect, ...]
    mapping: tuple[FactorMapping, ...]
    min_k: int = DEFAULT_MIN_K
    exclusions: tuple[Exclusion, ...] = ()
    mapped: bool = False

    @property
    def unmapped(self) -> tuple[StudyEffect, ...]:
        lookup = mapping_lookup(self.mapping)
        return tuple(e for e in self.effects if normalize_name(e.raw_factor) not in lookup)

    @property
    def retained(self) -> tuple[StudyEffect, ...]:
        """Effects that carry a canonical factor after `apply_mapping`."""
        return tuple(e for e in self.effects if e.factor is not None)

    def summary(self) -> dict:
        eff = self.retained if self.mapped else self.effects
        per_study = {}
        for e in eff:
            per_study[e.study_id] = e.n
        return {
            "studies": len(per_study),
            "effects": len(eff),
            "total_n": sum(e.n for e in eff),
            "factors": len({e.factor for e in eff if e.factor}),
        }


def mapping_lookup(mapping: Iterable[FactorMapping]) -> dict[str, str]:
    lookup = {}
    for fm in mapping:
        for raw in fm.raw_names:
            lookup[raw] = fm.canonical_factor
    return lookup


def load_mapping(path: str | Path | None = None) -> tuple[FactorMapping, ...]:
    """Read a ``canonical_factor,raw_name`` table.

    ``path`` may also be one of the bundled mapping names (``table2``,
    ``as-analysed``). Raises ValidationError if a raw name is claimed by two
    factors or a factor is not one of the canonical eight.
    """
    path = resolve_mapping_path(path)
    names: dict[str, set[str]] = {}
    owner: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(_strip_comments(fh))
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != ["canonical_factor", "raw_name"]:
            raise ParseError(f"{path}: expected header 'canonical_factor,raw_name'")
        for lineno, row in enumerate(reader, start=2):
            factor = (row["canonical_factor"] or "").strip()
            raw = normalize_name(row["raw_name"] or "")
            if factor not in CANONICAL_FACTORS:
                raise ValidationError(f"{path}:{lineno}: unknown canonical factor {factor!r}")
            if not raw:
                raise ParseError(f"{path}:{lineno}: empty raw_name")
            if raw in owner and owner[raw] != factor:
                raise ValidationError(
                    f"{path}:{lineno}: raw name {raw!r} mapped to both {owner[raw]} and {factor}")
            owner[raw] = factor
            names.setdefault(factor, set()).add(raw)
    return tuple(
        FactorMapping(f, frozenset(names[f]), FACTOR_DESCRIPTIONS[f])
        for f in CANONICAL_FACTORS if f in names
    )


def _strip_comments(lines):
    for line in lines:
        if not line.lstrip().startswith("#"):
            yield line


def _parse_row(row: list[str], rowno: int) -> StudyEffect:
    if len(row) != len(COLUMNS):
        raise ParseError(f"row {rowno}: expected {len(COLUMNS)} fields, got {len(row)}")
    rec = dict(zip(COLUMNS, (c.strip() for c in row)))
    try:
        year = int(rec["year"])
        n = int(rec["n"])
        male_pct = float(rec["male_pct"])
        value = float(rec["effect_value"])
    except ValueError as exc:
        raise ParseError(f"row {rowno}: non-numeric field ({exc})") from None
    try:
        return StudyEffect(
            study_id=rec["study_id"], first_author=rec["first_author"], year=year,
            pub_type=rec["pub_type"].lower(), region=rec["region"],
            region_class=rec["region_class"].lower(), n=n, male_pct=male_pct,
            raw_factor=rec["raw_factor"], effect_value=value,
            effect_metric=rec["effect_metric"].lower(),
        )
    except ValidationError as exc:
        raise ValidationError(f"row {rowno}: {exc}") from None


def read_effects(path: str | Path) -> tuple[StudyEffect, ...]:
    """Read and validate study rows. Row numbers in errors count physical lines."""
    effects = []
    seen: dict[tuple[str, str], int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header_seen = False
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        row = next(csv.reader([line]))
        if not header_seen:
            if [c.strip() for c in row] != list(COLUMNS):
                raise ParseError(f"row {lineno}: header does not match {','.join(COLUMNS)}")
            header_seen = True
            continue
        eff = _parse_row(row, lineno)
        if eff.key in seen:
            raise ValidationError(
                f"row {lineno}: duplicate (study_id, raw_factor) {eff.key} first seen on row {seen[eff.key]}")
        seen[eff.key] = lineno
        effects.append(eff)
    if not header_seen:
        raise ParseError(f"{path}: missing header row")
    return tuple(effects)


def parse_dataset(path: str | Path, mapping_path: str | Path | None = None,
                  min_k: int = DEFAULT_MIN_K) -> CodedDataset:
    """Parse the study CSV and the mapping table into an unmapped `CodedDataset`.

    Raw factors absent from the mapping stay in ``effects`` and are reported
    by `CodedDataset.unmapped` and a warning.
    """
    if min_k < 1:
        raise ValueError("min_k must be >= 1")
    effects = read_effects(path)
    mapping = load_mapping(mapping_path)
    ds = CodedDataset(effects=effects, mapping=mapping, min_k=min_k)
    for name in sorted({normalize_name(e.raw_factor) for e in ds.unmapped}):
        logger.warning("raw factor %r has no canonical factor; excluded", name)
    return ds


def apply_mapping(ds: CodedDataset) -> CodedDataset:
    """Annotate effects with their canonical factor and drop sparse factors.

    Unmapped raw names and factors with fewer than ``ds.min_k`` effects end up
    in ``exclusions``; they are never an error.
    """
    lookup = mapping_lookup(ds.mapping)
    annotated = []
    exclusions = []
    unmapped: dict[str, list[str]] = {}
    for e in ds.effects:
        factor = lookup.get(normalize_name(e.raw_factor))
        if factor is None:
            unmapped.setdefault(normalize_name(e.raw_factor), []).append(e.study_id)
        annotated.append(replace(e, factor=factor))
    for name in sorted(unmapped):
        ids = tuple(unmapped[name])
        exclusions.append(Exclusion(name, "unmapped", len(ids), ids))

    counts: dict[str, int] = {}
    for e in annotated:
        if e.factor is not None:
            counts[e.factor] = counts.get(e.factor, 0) + 1
    dropped = {f for f, k in counts.items() if k < ds.min_k}
    for f in sorted(dropped):
        ids = tuple(e.study_id for e in annotated if e.factor == f)
        exclusions.append(Exclusion(f, f"k={counts[f]} < min_k={ds.min_k}", counts[f], ids))
    annotated = [replace(e, factor=None) if e.factor in dropped else e for e in annotated]
    return replace(ds, effects=tuple(annotated), exclusions=tuple(exclusions), mapped=True)


def group_by_factor(ds: CodedDataset) -> dict[str, list[StudyEffect]]:
    """Partition mapped effects by canonical factor, in canonical factor order."""
    if not ds.mapped:
        ds = apply_mapping(ds)
    groups: dict[str, list[StudyEffect]] = {}
    for f in CANONICAL_FACTORS:
        members = [e for e in ds.effects if e.factor == f]
        if members:
            groups[f] = members
    return groups


def dataset_to_csv(ds: CodedDataset) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(COLUMNS)
    for e in ds.effects:
        w.writerow([
            e.study_id, e.first_author, e.year, e.pub_type, e.region, e.region_class,
            e.n, repr(e.male_pct), e.raw_factor, repr(e.effect_value), e.effect_metric,
        ])
    return out.getvalue()


def write_dataset(ds: CodedDataset, path: str | Path) -> None:
    Path(path).write_text(dataset_to_csv(ds), encoding="utf-8")


def load_bundled(mapping: str = "as-analysed", min_k: int = DEFAULT_MIN_K) -> CodedDataset:
    """The bundled replication dataset, parsed with one of the bundled mappings."""
    return parse_dataset(bundled_path("studies.csv"), mapping, min_k=min_k)
