"""Publication-bias diagnostics: fail-safe N, Egger's regression, funnel points."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .transforms import NormalizedEffect

# critical values for the combined Stouffer Z
NFS_CRITICAL = {
    "two_tailed_196": 1.959964,
    "one_tailed_1645": 1.644854,
}


class BiasError(ValueError):
    pass


@dataclass(frozen=True)
class EggerResult:
    intercept: float
    se: float
    ci_low: float
    ci_high: float
    t: float
    df: int
    p: float
    slope: float


@dataclass(frozen=True)
class FunnelPoint:
    z: float
    se: float
    study_id: str


@dataclass(frozen=True)
class BiasDiagnostics:
    factor: str | None
    k: int
    nfs: int
    nfs_threshold: int
    nfs_variant: str
    egger_intercept: float
    egger_ci_low: float
    egger_ci_high: float
    egger_t: float
    egger_df: int
    egger_p: float
    verdict: str


def failsafe_n(effects: Sequence[NormalizedEffect], variant: str = "two_tailed_196") -> int:
    """Rosenthal's fail-safe N on per-study z = Fisher z / se.

    Returns the smallest whole number of averaged-null studies that pulls the
    Stouffer combination below the critical value, i.e. the ceiling of
    (sum z_i)^2 / z_crit^2 - k, clamped at 0.
    """
    if variant not in NFS_CRITICAL:
        raise ValueError(f"unknown fail-safe N variant {variant!r}")
    k = len(effects)
    if k < 2:
        raise BiasError(f"fail-safe N needs k >= 2, got k={k}")
    total = math.fsum(e.z / e.se_z for e in effects)
    raw = total ** 2 / NFS_CRITICAL[variant] ** 2 - k
    # guard against 70.0000000001 style rounding noise before the ceiling
    return max(0, math.ceil(round(raw, 9)))


def egger_test(effects: Sequence[NormalizedEffect], level: float = 0.95) -> EggerResult:
    """Egger's regression: standardized effect z/se on precision 1/se, OLS.

    The intercept measures funnel asymmetry; its t test has k - 2 df.
    """
    k = len(effects)
    if k < 3:
        raise BiasError(f"Egger's test needs k >= 3, got k={k}")
    se = np.array([e.se_z for e in effects], dtype=float)
    y = np.array([e.z for e in effects], dtype=float) / se
    x = 1.0 / se
    xm = math.fsum(x) / k
    ym = math.fsum(y) / k
    dx = x - xm
    sxx = math.fsum(dx * dx)
    if sxx <= 1e-12 * max(1.0, xm * xm) * k:
        raise BiasError("all precisions are equal; Egger regression is singular")
    slope = math.fsum(dx * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - intercept - slope * x
    df = k - 2
    s2 = math.fsum(resid * resid) / df
    se_a = math.sqrt(s2 * (1.0 / k + xm * xm / sxx))
    if se_a == 0:
        t = 0.0 if intercept == 0 else math.copysign(math.inf, intercept)
        p = 1.0 if intercept == 0 else 0.0
    else:
        t = intercept / se_a
        p = float(2.0 * stats.t.sf(abs(t), df))
    q = float(stats.t.ppf(0.5 + level / 2, df))
    return EggerResult(
        intercept=intercept, se=se_a, ci_low=intercept - q * se_a, ci_high=intercept + q * se_a,
        t=t, df=df, p=p, slope=slope,
    )


def funnel_points(effects: Sequence[NormalizedEffect], pooled_z: float | None = None
                  ) -> tuple[list[FunnelPoint], float]:
    """Funnel scatter (z, se) plus the reference-line position.

    ``pooled_z`` may be a float or anything with a ``z_pooled`` attribute; it
    defaults to the fixed-effect mean of the points.
    """
    if not effects:
        raise BiasError("funnel plot needs at least one effect")
    points = [FunnelPoint(z=e.z, se=e.se_z, study_id=e.study_id) for e in effects]
    if pooled_z is None:
        w = [1.0 / e.var_z for e in effects]
        line = math.fsum(wi * e.z for wi, e in zip(w, effects)) / math.fsum(w)
    else:
        line = float(getattr(pooled_z, "z_pooled", pooled_z))
    return points, line


def bias_verdict(nfs: int, k: int, egger_p: float) -> str:
    if nfs >= 5 * k + 10 and egger_p > 0.05:
        return "no_bias_indicated"
    return "bias_indicated"


def diagnose_bias(effects: Sequence[NormalizedEffect], factor: str | None = None,
                  variant: str = "two_tailed_196") -> BiasDiagnostics:
    k = len(effects)
    nfs = failsafe_n(effects, variant)
    eg = egger_test(effects)
    return BiasDiagnostics(
        factor=factor, k=k, nfs=nfs, nfs_threshold=5 * k + 10, nfs_variant=variant,
        egger_intercept=eg.intercept, egger_ci_low=eg.ci_low, egger_ci_high=eg.ci_high,
        egger_t=eg.t, egger_df=eg.df, egger_p=eg.p, verdict=bias_verdict(nfs, k, eg.p),
    )
