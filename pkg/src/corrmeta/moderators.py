"""Moderator analyses: categorical subgroups (Q-between) and meta-regression."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .pooling import Z_CRIT, PooledEstimate, fixed_effect_estimate, random_effects_pool
from .transforms import NormalizedEffect


class ModeratorError(ValueError):
    pass


@dataclass(frozen=True)
class SubgroupEstimate:
    label: str
    k: int
    N: int
    r_pooled: float
    ci_low: float
    ci_high: float
    z_stat: float
    p: float
    z_pooled: float
    se: float
    tau2: float


@dataclass(frozen=True)
class SubgroupResult:
    factor: str | None
    key: str
    groups: tuple[SubgroupEstimate, ...]
    q_between: float
    df_between: int
    p_between: float


@dataclass(frozen=True)
class MetaRegressionResult:
    factor: str | None
    moderator: str
    coefficient: float
    se: float
    ci_low: float
    ci_high: float
    z_stat: float
    p: float
    intercept: float
    intercept_se: float
    tau2_residual: float
    Q_residual: float
    k: int


def _pool_group(effects: Sequence[NormalizedEffect], tau2_mode: str) -> PooledEstimate:
    if len(effects) == 1 or tau2_mode == "fixed":
        return fixed_effect_estimate(effects)
    return random_effects_pool(effects)


def q_between(z: Sequence[float], se: Sequence[float]) -> float:
    """Weighted dispersion of subgroup means around their weighted mean."""
    z = np.asarray(z, dtype=float)
    w = 1.0 / np.asarray(se, dtype=float) ** 2
    zbar = math.fsum(w * z) / math.fsum(w)
    return math.fsum(w * (z - zbar) ** 2)


def subgroup_analysis(effects: Sequence[NormalizedEffect], key: str | Callable = "region_class",
                      factor: str | None = None, tau2_mode: str = "separate") -> SubgroupResult:
    """Pool each subgroup with its own DL tau^2 and test between-group spread.

    ``key`` is an attribute name of the effects or a callable returning the
    label. ``tau2_mode="fixed"`` uses inverse-variance weights throughout,
    under which Q_within + Q_between equals the total Q.
    """
    if tau2_mode not in ("separate", "fixed"):
        raise ValueError(f"unknown tau2_mode {tau2_mode!r}")
    label_of = key if callable(key) else (lambda e: getattr(e, key))
    key_name = getattr(key, "__name__", "custom") if callable(key) else key
    buckets: dict[str, list[NormalizedEffect]] = {}
    for e in effects:
        label = label_of(e)
        if label is None:
            raise ModeratorError(f"effect {e.study_id} has no {key_name} label")
        buckets.setdefault(str(label), []).append(e)
    if len(buckets) < 2:
        raise ModeratorError(
            f"subgroup analysis needs >= 2 non-empty subgroups, got {sorted(buckets)}")
    groups = []
    for label in sorted(buckets):
        members = buckets[label]
        est = _pool_group(members, tau2_mode)
        groups.append(SubgroupEstimate(
            label=label, k=est.k, N=est.N, r_pooled=est.r_pooled, ci_low=est.ci_low,
            ci_high=est.ci_high, z_stat=est.z_stat, p=est.p, z_pooled=est.z_pooled,
            se=est.se, tau2=est.tau2_used,
        ))
    qb = q_between([g.z_pooled for g in groups], [g.se for g in groups])
    df = len(groups) - 1
    return SubgroupResult(
        factor=factor, key=key_name, groups=tuple(groups), q_between=qb, df_between=df,
        p_between=float(stats.chi2.sf(qb, df)),
    )


def wls_meta_regression(z: np.ndarray, v: np.ndarray, X: np.ndarray, tau2: float | None = None
                        ) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Mixed-effects meta-regression by weighted least squares.

    Residual tau^2 is the method-of-moments estimate
    max(0, (Q_E - (k - p)) / tr(P)) with P = W - W X (X'WX)^-1 X'W,
    which reduces to DerSimonian-Laird for an intercept-only design.
    Returns (coefficients, covariance, tau2, Q_E).
    """
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    X = np.asarray(X, dtype=float)
    k, p = X.shape
    if k <= p:
        raise ModeratorError(f"meta-regression needs k > {p}, got k={k}")
    if np.linalg.matrix_rank(X) < p:
        raise ModeratorError("meta-regression design is singular (constant moderator?)")
    w = 1.0 / v
    XtW = X.T * w
    A = np.linalg.inv(XtW @ X)
    b_fixed = A @ (XtW @ z)
    resid = z - X @ b_fixed
    Q_E = float(np.sum(w * resid ** 2))
    if tau2 is None:
        # tr(P) = sum(w) - tr((X'WX)^-1 X'W^2 X)
        trP = float(np.sum(w) - np.trace(A @ ((X.T * w ** 2) @ X)))
        tau2 = max(0.0, (Q_E - (k - p)) / trP) if trP > 0 else 0.0
    ws = 1.0 / (v + tau2)
    XtWs = X.T * ws
    cov = np.linalg.inv(XtWs @ X)
    coef = cov @ (XtWs @ z)
    return coef, cov, float(tau2), Q_E


def meta_regression(effects: Sequence[NormalizedEffect], moderator: str | Sequence[float] = "male_pct",
                    factor: str | None = None) -> MetaRegressionResult:
    """Random-effects meta-regression of Fisher z on one continuous moderator.

    ``moderator`` is an attribute name (default ``male_pct``, in percent) or a
    sequence of per-effect values. The slope is tested against the standard
    normal.
    """
    k = len(effects)
    if k < 3:
        raise ModeratorError(f"meta-regression needs k >= 3, got k={k}")
    if isinstance(moderator, str):
        name = moderator
        x = [getattr(e, moderator) for e in effects]
        if any(val is None for val in x):
            raise ModeratorError(f"some effects lack moderator {moderator!r}")
    else:
        name = "custom"
        x = list(moderator)
        if len(x) != k:
            raise ModeratorError("moderator length does not match effects")
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        raise ModeratorError("moderator is constant; slope is not identifiable")
    z = np.array([e.z for e in effects])
    v = np.array([e.var_z for e in effects])
    X = np.column_stack([np.ones(k), x])
    coef, cov, tau2, Q_E = wls_meta_regression(z, v, X)
    slope = float(coef[1])
    se = math.sqrt(cov[1, 1])
    zs = slope / se
    return MetaRegressionResult(
        factor=factor, moderator=name, coefficient=slope, se=se,
        ci_low=slope - Z_CRIT * se, ci_high=slope + Z_CRIT * se,
        z_stat=zs, p=float(2.0 * stats.norm.sf(abs(zs))),
        intercept=float(coef[0]), intercept_se=math.sqrt(cov[0, 0]),
        tau2_residual=tau2, Q_residual=Q_E, k=k,
    )
