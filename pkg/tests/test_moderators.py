import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from corrmeta.moderators import (
    ModeratorError, meta_regression, q_between, subgroup_analysis, wls_meta_regression,
)
from corrmeta.pooling import heterogeneity, random_effects_pool
from helpers import eff, eff_v

labelled = st.lists(
    st.tuples(st.floats(-1.5, 1.5), st.integers(10, 3000), st.sampled_from(["a", "b", "c"])),
    min_size=4, max_size=15,
).filter(lambda d: len({t[2] for t in d}) >= 2)


def test_ee_fixture(groups):
    sg = subgroup_analysis(groups["EffortExpectancy"])
    assert [g.label for g in sg.groups] == ["developed", "developing"]
    assert sg.df_between == 1
    assert sg.q_between == pytest.approx(12.238, rel=0.1)
    assert abs(sg.groups[1].r_pooled - 0.276) <= 0.02


def test_habit_fixture(groups):
    sg = subgroup_analysis(groups["Habit"])
    dev, ing = sg.groups
    assert dev.k == 1 and dev.tau2 == 0.0
    assert abs(dev.r_pooled - 0.559) <= 0.02 and abs(ing.r_pooled - 0.221) <= 0.02
    assert sg.q_between == pytest.approx(18.293, rel=0.1)


def test_equal_means_give_zero_qb():
    effects = [eff(0.3, 50, region_class="developed"), eff(0.3, 90, region_class="developing"),
               eff(0.3, 120, region_class="developing")]
    assert subgroup_analysis(effects).q_between == pytest.approx(0.0, abs=1e-20)


def test_single_subgroup_is_degenerate():
    with pytest.raises(ModeratorError):
        subgroup_analysis([eff(0.1, region_class="developing"), eff(0.3, region_class="developing")])


def test_callable_key():
    effects = [eff(0.1 * i, 50 + i, study_id=f"S{i}") for i in range(6)]
    sg = subgroup_analysis(effects, key=lambda e: "low" if e.z < 0.25 else "high")
    assert {g.label: g.k for g in sg.groups} == {"high": 3, "low": 3}


@given(labelled)
def test_q_decomposition_fixed_weights(data):
    effects = [eff(z, n, region_class=g) for z, n, g in data]
    sg = subgroup_analysis(effects, tau2_mode="fixed")
    q_within = sum(heterogeneity([e for e in effects if e.region_class == g.label], permissive=True).Q
                   for g in sg.groups)
    total = heterogeneity(effects).Q
    assert q_within + sg.q_between == pytest.approx(total, rel=1e-9, abs=1e-9)


def test_q_between_direct():
    assert q_between([0.0, 1.0], [1.0, 1.0]) == pytest.approx(0.5)


def test_wls_closed_form_tau0():
    # unit variances, x = 0..3, z = (0, 1, 1, 2): OLS slope 0.6, intercept 0.1,
    # (X'X)^-1 = [[14, -6], [-6, 4]] / 20
    X = np.column_stack([np.ones(4), np.arange(4.0)])
    coef, cov, tau2, _ = wls_meta_regression(np.array([0.0, 1, 1, 2]), np.ones(4), X, tau2=0.0)
    assert coef == pytest.approx([0.1, 0.6], abs=1e-12)
    assert cov == pytest.approx(np.array([[14, -6], [-6, 4]]) / 20, abs=1e-12)
    assert tau2 == 0.0


def test_mirrored_pairs_zero_slope():
    effects = [eff(0.2, 100, male_pct=30), eff(-0.2, 100, male_pct=30),
               eff(0.2, 100, male_pct=70), eff(-0.2, 100, male_pct=70)]
    assert meta_regression(effects).coefficient == pytest.approx(0.0, abs=1e-15)


def test_meta_regression_errors():
    with pytest.raises(ModeratorError, match="k >= 3"):
        meta_regression([eff(0.1, male_pct=10), eff(0.2, male_pct=20)])
    with pytest.raises(ModeratorError, match="constant"):
        meta_regression([eff(0.1, male_pct=50), eff(0.2, male_pct=50), eff(0.3, male_pct=50)])


def test_attitude_fixture(groups):
    m = meta_regression(groups["Attitude"])
    assert abs(m.coefficient - 0.018) <= 0.002
    assert abs(m.se - 0.008) <= 0.002
    assert m.p == pytest.approx(0.022, abs=0.05) and m.p < 0.05


@given(st.lists(st.tuples(st.floats(-1.5, 1.5), st.floats(0.0005, 0.5)), min_size=3, max_size=12))
def test_intercept_only_equals_dl(data):
    effects = [eff_v(z, v) for z, v in data]
    X = np.ones((len(data), 1))
    coef, cov, tau2, _ = wls_meta_regression([z for z, _ in data], [v for _, v in data], X)
    re = random_effects_pool(effects)
    assert tau2 == pytest.approx(re.tau2_used, rel=1e-9, abs=1e-9)
    assert coef[0] == pytest.approx(re.z_pooled, rel=1e-9, abs=1e-9)
    assert math.sqrt(cov[0, 0]) == pytest.approx(re.se, rel=1e-9)


@given(st.lists(st.tuples(st.floats(-1.5, 1.5), st.integers(10, 3000), st.floats(0, 100)), min_size=4,
                max_size=12, unique_by=lambda t: round(t[2], 3)), st.floats(-50, 50))
def test_slope_invariant_to_moderator_shift(data, shift):
    effects = [eff(z, n) for z, n, _ in data]
    x = [m for _, _, m in data]
    a = meta_regression(effects, x)
    b = meta_regression(effects, [m + shift for m in x])
    assert b.coefficient == pytest.approx(a.coefficient, rel=1e-6, abs=1e-9)
    assert b.tau2_residual == pytest.approx(a.tau2_residual, rel=1e-6, abs=1e-9)
