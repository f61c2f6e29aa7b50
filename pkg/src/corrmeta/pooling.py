"""Fixed- and random-effects pooling of Fisher-z effects, with heterogeneity."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .transforms import NormalizedEffect

Z_CRIT = 1.96


class PoolingError(ValueError):
    pass


@dataclass(frozen=True)
class HeterogeneityStats:
    Q: float
    df: int
    p_Q: float
    I2: float
    tau2: float


@dataclass(frozen=True)
class PooledEstimate:
    factor: str | None
    model: str
    k: int
    N: int
    z_pooled: float
    se: float
    r_pooled: float
    ci_low: float
    ci_high: float
    z_stat: float
    p: float
    het: HeterogeneityStats | None
    tau2_used: float = 0.0


def _arrays(effects: Sequence[NormalizedEffect]) -> tuple[np.ndarray, np.ndarray]:
    if len(effects) == 0:
        raise PoolingError("cannot pool an empty list of effects")
    z = np.array([e.z for e in effects], dtype=float)
    v = np.array([e.var_z for e in effects], dtype=float)
    return z, v


def _weighted_mean(z: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    sw = math.fsum(w)
    return math.fsum(w * z) / sw, 1.0 / math.sqrt(sw)


def fixed_effect_pool(effects: Sequence[NormalizedEffect]) -> tuple[float, float]:
    """Inverse-variance weighted mean z and its standard error."""
    z, v = _arrays(effects)
    return _weighted_mean(z, 1.0 / v)


def cochran_q(z: np.ndarray, v: np.ndarray) -> float:
    w = 1.0 / v
    zbar, _ = _weighted_mean(z, w)
    return math.fsum(w * (z - zbar) ** 2)


def dl_tau2(Q: float, df: int, w: np.ndarray) -> float:
    """DerSimonian-Laird method-of-moments between-study variance."""
    c = math.fsum(w) - math.fsum(w ** 2) / math.fsum(w)
    if c <= 0:
        return 0.0
    return max(0.0, (Q - df) / c)


def i_squared(Q: float, df: int) -> float:
    if Q <= 0:
        return 0.0
    return max(0.0, (Q - df) / Q) * 100.0


def heterogeneity(effects: Sequence[NormalizedEffect], permissive: bool = False) -> HeterogeneityStats:
    """Cochran's Q, its chi-square p-value, I^2 (percent) and DL tau^2.

    With fewer than two effects this raises unless ``permissive`` is set, in
    which case Q = tau2 = 0 and p = 1.
    """
    z, v = _arrays(effects)
    k = len(z)
    if k < 2:
        if permissive:
            return HeterogeneityStats(Q=0.0, df=0, p_Q=1.0, I2=0.0, tau2=0.0)
        raise PoolingError(f"heterogeneity needs k >= 2, got k={k}")
    df = k - 1
    Q = cochran_q(z, v)
    return HeterogeneityStats(
        Q=Q, df=df, p_Q=float(stats.chi2.sf(Q, df)), I2=i_squared(Q, df),
        tau2=dl_tau2(Q, df, 1.0 / v),
    )


def significance_test(z_pooled: float, se: float) -> tuple[float, float]:
    """Two-tailed normal test of a pooled z."""
    if not se > 0:
        raise PoolingError(f"standard error must be positive, got {se}")
    z_stat = z_pooled / se
    return z_stat, float(2.0 * stats.norm.sf(abs(z_stat)))


def _estimate(effects, factor, model, z_pooled, se, het, tau2) -> PooledEstimate:
    z_stat, p = significance_test(z_pooled, se)
    return PooledEstimate(
        factor=factor, model=model, k=len(effects), N=sum(e.n for e in effects),
        z_pooled=z_pooled, se=se, r_pooled=math.tanh(z_pooled),
        ci_low=math.tanh(z_pooled - Z_CRIT * se), ci_high=math.tanh(z_pooled + Z_CRIT * se),
        z_stat=z_stat, p=p, het=het, tau2_used=tau2,
    )


def random_effects_pool(effects: Sequence[NormalizedEffect], factor: str | None = None,
                        tau2: float | None = None) -> PooledEstimate:
    """DerSimonian-Laird random-effects estimate, back-transformed to r.

    ``tau2`` overrides the DL estimate (0 collapses to the fixed-effect
    model). A single effect falls back to the fixed-effect passthrough with a
    warning.
    """
    z, v = _arrays(effects)
    if len(z) == 1:
        warnings.warn("random-effects pooling of a single effect; using fixed-effect passthrough",
                      RuntimeWarning, stacklevel=2)
        return fixed_effect_estimate(effects, factor)
    het = heterogeneity(effects)
    t2 = het.tau2 if tau2 is None else float(tau2)
    if t2 < 0:
        raise PoolingError("tau2 must be non-negative")
    zr, se = _weighted_mean(z, 1.0 / (v + t2))
    return _estimate(effects, factor, "random", zr, se, het, t2)


def fixed_effect_estimate(effects: Sequence[NormalizedEffect], factor: str | None = None) -> PooledEstimate:
    zf, se = fixed_effect_pool(effects)
    het = heterogeneity(effects, permissive=True)
    return _estimate(effects, factor, "fixed", zf, se, het, 0.0)


def select_model(het: HeterogeneityStats, alpha: float = 0.05) -> str:
    """Random effects when Q is significant at ``alpha``, fixed otherwise."""
    return "random" if het.df > 0 and het.p_Q < alpha else "fixed"


def pool(effects: Sequence[NormalizedEffect], model: str = "auto",
         factor: str | None = None) -> PooledEstimate:
    if model == "auto":
        model = select_model(heterogeneity(effects, permissive=True))
    if model == "random":
        return random_effects_pool(effects, factor)
    if model == "fixed":
        return fixed_effect_estimate(effects, factor)
    raise ValueError(f"unknown model {model!r}")
