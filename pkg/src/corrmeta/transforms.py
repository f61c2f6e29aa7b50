"""Correlation-scale and Fisher-z-scale transforms of coded effects."""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal

from .dataset import StudyEffect

BETA_OFFSET = Decimal("0.05")


class RangeError(ValueError):
    pass


class DegenerateSampleError(ValueError):
    pass


def beta_to_r(beta: float) -> float:
    """Convert a standardized regression coefficient to an approximate r.

    r = beta + 0.05 for beta >= 0, and r = beta otherwise.
    """
    # decimal keeps e.g. 0.49 -> 0.54 bit-identical to the literal
    r = float(Decimal(repr(float(beta))) + BETA_OFFSET) if beta >= 0 else float(beta)
    if not -1 < r < 1:
        raise RangeError(f"beta={beta} converts to r={r}, outside (-1, 1)")
    return r


def r_to_z(r: float) -> float:
    if not -1 < r < 1:
        raise RangeError(f"r={r} outside (-1, 1)")
    return math.atanh(r)


def z_to_r(z: float) -> float:
    return math.tanh(z)


def variance_of_z(n: int) -> float:
    if n <= 3:
        raise DegenerateSampleError(f"n={n}: Fisher z variance needs n > 3")
    return 1.0 / (n - 3)


def classify_magnitude(r: float) -> str:
    a = abs(r)
    if a < 0.1:
        return "negligible"
    if a < 0.3:
        return "weak"
    if a < 0.5:
        return "moderate"
    return "strong"


@dataclass(frozen=True)
class NormalizedEffect:
    r: float
    z: float
    var_z: float
    se_z: float
    n: int
    study_id: str = ""
    factor: str | None = None
    region_class: str | None = None
    male_pct: float | None = None
    source: StudyEffect | None = None

    @classmethod
    def from_r(cls, r: float, n: int, **meta) -> "NormalizedEffect":
        var = variance_of_z(n)
        return cls(r=r, z=r_to_z(r), var_z=var, se_z=math.sqrt(var), n=n, **meta)


def normalize(effect: StudyEffect) -> NormalizedEffect:
    if effect.effect_metric == "regression_beta":
        r = beta_to_r(effect.effect_value)
    else:
        r = effect.effect_value
    return NormalizedEffect.from_r(
        r, effect.n, study_id=effect.study_id, factor=effect.factor,
        region_class=effect.region_class, male_pct=effect.male_pct, source=effect,
    )


def normalize_all(effects) -> list[NormalizedEffect]:
    return [normalize(e) for e in effects]
