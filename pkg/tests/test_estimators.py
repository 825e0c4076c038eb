import warnings

import numpy as np
import pytest
from hypothesis import given, settings

from survadj.dataset import integrate_curve
from survadj.errors import HullViolation, MissingCovariateSet, NoMatches
from survadj.estimators import (ALWAYS_PROPER, EstimationContext, ExtremeWeightWarning,
                                MethodId, el_weights, est_aiptw, est_aiptw_pv, est_el,
                                est_iptw_pv, est_matching, estimate, estimate_many,
                                make_context, match_greedy, match_weights_ate)
from survadj.nonparam import kaplan_meier, nelson_aalen, pseudo_values
from survadj.simulation import DGPConfig, draw_replication, generate_superpopulation

from conftest import datasets, make_data, random_data

OUT = ["X1", "X2", "X4", "X5"]
TRT = ["X2", "X5"]


@pytest.fixture(scope="module")
def superpop():
    return generate_superpopulation(DGPConfig(superpop_size=20_000), 11)


@pytest.fixture(scope="module")
def sample(superpop):
    return draw_replication(superpop, DGPConfig(superpop_size=20_000), 300, 5)


def _same(a, b, atol=0.0):
    np.testing.assert_allclose(a.times, b.times, atol=atol, rtol=0)
    np.testing.assert_allclose(a.all_values, b.all_values, atol=atol, rtol=0)


# --------------------------------------------------------------------------
# dispatcher and diagnostics

def test_km_is_stratified_and_proper(sample):
    res = estimate("KM", sample)
    for z in (0, 1):
        _same(res.curve(z), kaplan_meier(sample, z))
    assert res.nm_flag == (False, False) and res.oob_flag == (False, False)


@pytest.mark.parametrize("method", sorted(ALWAYS_PROPER, key=lambda m: m.value))
def test_proper_methods_never_flag(sample, method):
    res = estimate(method, sample, OUT, TRT)
    assert res.nm_flag == (False, False)
    assert res.oob_flag == (False, False)
    for c in res.curves:
        assert c.is_monotone() and c.is_bounded()


@pytest.mark.parametrize("method", list(MethodId))
def test_corrections_give_proper_curves(sample, method):
    res = estimate(method, sample, OUT, TRT, apply_corrections=True)
    assert res.corrected
    for c in res.curves:
        assert c.is_monotone(0.0) and c.is_bounded(0.0)


def test_flags_are_computed_before_correction(rng):
    # tiny noisy sample: the pseudo-value methods usually misbehave
    seen = False
    for seed in range(30):
        data = random_data(np.random.default_rng(seed), 25, p=2)
        raw = estimate("AIPTW_PV", data, ["X1", "X2"], ["X1", "X2"])
        fixed = estimate("AIPTW_PV", data, ["X1", "X2"], ["X1", "X2"],
                         apply_corrections=True)
        assert raw.nm_flag == fixed.nm_flag and raw.oob_flag == fixed.oob_flag
        seen |= any(raw.nm_flag) or any(raw.oob_flag)
    assert seen


def test_missing_covariate_set(sample):
    with pytest.raises(MissingCovariateSet):
        estimate("G_FORMULA", sample, ["X1", "nope"], TRT)
    with pytest.raises(MissingCovariateSet):
        estimate("IPTW_KM", sample, OUT, None)
    with pytest.raises(MissingCovariateSet):
        estimate("AIPTW", sample, None, TRT)


def test_method_parse():
    assert MethodId.parse("iptw_km") is MethodId.IPTW_KM
    with pytest.raises(ValueError):
        MethodId.parse("TMLE")


def test_row_permutation_determinism(sample):
    perm = np.random.default_rng(3).permutation(sample.n)
    shuffled = sample.subset(perm)
    a = estimate_many(list(MethodId), sample, OUT, TRT)
    b = estimate_many(list(MethodId), shuffled, OUT, TRT)
    for m in MethodId:
        for z in (0, 1):
            assert np.array_equal(a[m].curve(z).times, b[m].curve(z).times)
            assert np.array_equal(a[m].curve(z).all_values, b[m].curve(z).all_values), m


def test_repeat_calls_are_bit_identical(sample):
    a = estimate("AIPTW", sample, OUT, TRT)
    b = estimate("AIPTW", sample, OUT, TRT)
    assert np.array_equal(a.curve_z1.all_values, b.curve_z1.all_values)


# --------------------------------------------------------------------------
# weighting methods

def test_constant_propensity_reductions(sample):
    km = estimate("KM", sample)
    iptw = estimate("IPTW_KM", sample, propensity=0.5)
    gf = estimate("G_FORMULA", sample, OUT)
    gfi = estimate("G_FORMULA_IPTW", sample, OUT, propensity=0.5)
    hz = estimate("IPTW_HZ", sample, propensity=0.5)
    for z in (0, 1):
        _same(iptw.curve(z), km.curve(z), atol=1e-13)
        _same(gfi.curve(z), gf.curve(z), atol=1e-10)
        na = nelson_aalen(sample, z)
        np.testing.assert_allclose(hz.curve(z).values, np.exp(-na.values), atol=1e-13)


def test_iptw_hz_dominates_iptw_km(sample):
    km = estimate("IPTW_KM", sample, OUT, TRT)
    hz = estimate("IPTW_HZ", sample, OUT, TRT)
    for z in (0, 1):
        t = np.r_[0.0, km.curve(z).times, hz.curve(z).times]
        assert np.all(hz.curve(z)(t) >= km.curve(z)(t) - 1e-15)


def test_iptw_pv_hand_case():
    # uncensored, pi = 0.5: group-wise empirical survival at the grid times
    data = make_data([1.0, 2.0, 3.0, 4.0], group=[0, 1, 0, 1])
    res = estimate("IPTW_PV", data, propensity=0.5)
    np.testing.assert_allclose(res.curve_z0.values, [0.5, 0.5, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(res.curve_z1.values, [1.0, 0.5, 0.5, 0.0], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(datasets(min_n=6, max_n=30))
def test_iptw_pv_is_a_convex_combination(data):
    ps = np.linspace(0.2, 0.8, data.n)
    ctx = make_context(data, propensity=ps)
    curves = est_iptw_pv(ctx.data, (), ctx=ctx)
    theta = ctx.pseudo().values
    for z, c in enumerate(curves):
        rows = theta[ctx.data.group == z]
        assert np.all(c.values >= rows.min(axis=0) - 1e-12)
        assert np.all(c.values <= rows.max(axis=0) + 1e-12)


def test_extreme_weight_warning():
    x = np.linspace(-1, 1, 40)[:, None]
    group = (np.arange(40) % 2).astype(int)
    data = make_data(np.arange(1, 41), group=group, x=x)
    ps = np.full(40, 0.5)
    ps[0] = 0.001  # control with a tiny propensity of being treated -> fine
    ps[1] = 0.001  # treated with tiny propensity -> weight 1000
    with pytest.warns(ExtremeWeightWarning):
        estimate("IPTW_KM", data, propensity=ps)


def test_trimming_clips_propensities(sample):
    ctx = EstimationContext(sample, trim=0.2)
    ps = ctx.prob_treated(TRT)
    assert ps.min() >= 0.2 and ps.max() <= 0.8
    with pytest.raises(ValueError):
        EstimationContext(sample, trim=0.5)


# --------------------------------------------------------------------------
# matching

def test_greedy_nearest_neighbour():
    ps = np.array([0.3, 0.1, 0.28, 0.9])
    group = np.array([1, 0, 0, 0])
    assert match_greedy(ps, group) == [(0, 2)]
    with pytest.raises(NoMatches):
        match_greedy(ps, group, caliper=0.01)


def test_greedy_descending_order_without_replacement():
    ps = np.array([0.5, 0.7, 0.6])
    group = np.array([1, 1, 0])
    # 0.7 goes first and takes the only control
    assert match_greedy(ps, group) == [(1, 2)]


def test_perfect_pairs_reproduce_stratified_km():
    ps = np.array([0.2, 0.2, 0.5, 0.5, 0.7, 0.7])
    group = np.array([1, 0, 0, 1, 1, 0])
    data = make_data([1.0, 2.5, 3.0, 0.5, 2.0, 4.0], status=[1, 0, 1, 1, 1, 1], group=group)
    km = estimate("KM", data)
    for how in ("ATE", "greedy"):
        res = estimate("MATCHING", data, propensity=ps, matching=how)
        for z in (0, 1):
            _same(res.curve(z), km.curve(z), atol=1e-15)
    np.testing.assert_array_equal(match_weights_ate(ps, group), 2.0)


def test_matching_caliper_in_sd_units():
    ps = np.array([0.1, 0.5, 0.2, 0.9])
    group = np.array([1, 0, 1, 0])
    data = make_data([1.0, 2.0, 3.0, 4.0], group=group)
    # sd of ps is ~0.31; 0.1 sd = 0.031 is below every treated-control gap
    with pytest.raises(NoMatches):
        estimate("MATCHING", data, propensity=ps, caliper=0.1)
    estimate("MATCHING", data, propensity=ps, caliper=1.0)


def test_zero_weight_tail_is_harmless():
    # the two longest survivors are unmatched under greedy matching
    ps = np.array([0.4, 0.41, 0.9, 0.1])
    group = np.array([1, 0, 1, 0])
    data = make_data([1.0, 2.0, 5.0, 6.0], group=group)
    res = estimate("MATCHING", data, propensity=ps, matching="greedy", caliper=0.2)
    for c in res.curves:
        assert np.all(np.isfinite(c.values))
        np.testing.assert_allclose(c.values, [0.0])


# --------------------------------------------------------------------------
# empirical likelihood

def test_el_two_point():
    p = el_weights(np.array([[0.0], [1.0]]), [0.75])
    np.testing.assert_allclose(p, [0.25, 0.75], atol=1e-12)


def test_el_hull_violation():
    with pytest.raises(HullViolation):
        el_weights(np.array([[0.0], [0.5], [1.0]]), [1.5])


def test_el_symmetric_group_gets_uniform_weights():
    x = np.array([[-1.0], [0.0], [1.0], [-2.0], [2.0]])
    np.testing.assert_allclose(el_weights(x, [0.0]), 0.2, atol=1e-15)


def test_el_weight_invariants(rng):
    x = rng.normal(size=(80, 3)) + 0.3
    target = np.zeros(3)
    p = el_weights(x, target)
    assert abs(p.sum() - 1) < 1e-10
    assert np.all(p > 0)
    assert np.max(np.abs(p @ x - target)) < 1e-8


def test_el_balances_to_pooled_mean(sample):
    curves = est_el(sample, TRT)
    assert all(c.is_monotone() and c.is_bounded() for c in curves)


# --------------------------------------------------------------------------
# doubly robust

def test_aiptw_hand_reduction():
    # no censoring, pi = 0.5, outcome model forced to 0:
    # S_z(t) = 2 * (group empirical survival) * (group fraction)
    data = make_data([1.0, 2.0, 3.0, 4.0], group=[0, 0, 1, 1])
    ctx = make_context(data, propensity=0.5)
    zero = [np.zeros((4, 4)), np.zeros((4, 4))]
    s0, s1 = est_aiptw(ctx.data, (), (), ctx=ctx, outcome_pred=zero)
    np.testing.assert_allclose(s0.values, 2 * 0.5 * np.array([0.5, 0.0, 0.0, 0.0]))
    np.testing.assert_allclose(s1.values, 2 * 0.5 * np.array([1.0, 1.0, 0.5, 0.0]))


def test_aiptw_pv_hand_reduction():
    data = make_data([1.0, 2.0, 3.0, 4.0], group=[0, 0, 1, 1])
    ctx = make_context(data, propensity=0.5)
    zero = [np.zeros((4, 4)), np.zeros((4, 4))]
    s0, s1 = est_aiptw_pv(ctx.data, (), (), ctx=ctx, outcome_pred=zero)
    np.testing.assert_allclose(s0.values, [0.5, 0.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(s1.values, [1.0, 1.0, 0.5, 0.0], atol=1e-12)


def test_aiptw_augmentation_shrinks_with_n(superpop):
    cfg = DGPConfig(superpop_size=20_000, censor_weibull=(0.0, 2.0))
    sp = generate_superpopulation(cfg, 3)
    mean_abs = {}
    for n in (100, 1000):
        vals = []
        for rep in range(10):
            data = draw_replication(sp, cfg, n, 100 + rep)
            ctx = make_context(data)
            gf = estimate("G_FORMULA", data, OUT, ctx=ctx)
            dr = estimate("AIPTW", data, OUT, TRT, ctx=ctx)
            for z in (0, 1):
                tau = float(data.time.max())
                vals.append(abs(integrate_curve(dr.curve(z), 0, tau)
                                - integrate_curve(gf.curve(z), 0, tau)))
        mean_abs[n] = np.mean(vals)
    assert mean_abs[1000] < mean_abs[100]


def test_g_formula_pv_intercept_and_z_only():
    rng = np.random.default_rng(1)
    time = rng.exponential(1.0, 20)
    group = np.arange(20) % 2
    data = make_data(time, group=group)
    res = estimate("G_FORMULA_PV", data, [])
    grid = pseudo_values(data).grid
    for z in (0, 1):
        emp = [(time[group == z] > t).mean() for t in grid]
        np.testing.assert_allclose(res.curve(z).values, emp, atol=1e-10)


def test_single_point_grid(sample):
    res = estimate("IPTW_PV", sample, OUT, TRT, grid=[0.5])
    assert len(res.curve_z0.times) == 1 and len(res.curve_z1.times) == 1


def test_g_formula_is_mean_of_subject_predictions(rng):
    from survadj.models import fit_cox, predict_cox_survival
    data = random_data(rng, 30, p=2)
    res = estimate("G_FORMULA", data, ["X1", "X2"])
    fit = fit_cox(data, ["X1", "X2"])
    for z in (0, 1):
        for t in (0.1, 0.7, 1.5):
            oracle = np.mean([predict_cox_survival(fit, z, x, t) for x in data.covariates])
            assert res.curve(z)(t) == pytest.approx(oracle, abs=1e-12)


def _aipcw_oracle(data, times, cens, fit, z):
    """Direct evaluation of the augmented response, one (i, t) at a time."""
    x = data.columns(fit.covariate_set)
    out = np.zeros((data.n, len(times)))
    u_all = cens.times
    g_before = np.r_[cens.initial, cens.values[:-1]]
    for i in np.flatnonzero(data.group == z):
        s_i = lambda t: fit.survival_matrix(z, x[i:i + 1], [t])[0, 0]
        for j, t in enumerate(times):
            val = float(data.time[i] > t) / cens(t)
            for k, u in enumerate(u_all):
                if u > t:
                    break
                dlam = 1 - cens.values[k] / g_before[k]
                dm = float(data.time[i] == u and data.status[i] == 0) \
                    - float(data.time[i] >= u) * dlam
                val += s_i(t) / s_i(u) * dm / cens.values[k]
            out[i, j] = val
    return out


def test_aipcw_response_matches_direct_sum():
    from survadj.estimators import aipcw_response
    from survadj.nonparam import censoring_km, event_grid
    data = random_data(np.random.default_rng(8), 40, p=2, censor=0.4)
    fit = make_context(data).cox(["X1", "X2"])
    times = event_grid(data)
    times = times[times < data.time.max()]
    cens = censoring_km(data)
    for z in (0, 1):
        got = aipcw_response(data, times, cens, fit, z)
        np.testing.assert_allclose(got, _aipcw_oracle(data, times, cens, fit, z), atol=1e-12)


def test_aipcw_response_is_one_for_survivors_under_flat_model():
    from survadj import StepCurve
    from survadj.estimators import aipcw_response
    from survadj.models import CoxFit
    from survadj.nonparam import censoring_km
    data = random_data(np.random.default_rng(9), 60, p=1, censor=0.5)
    flat = CoxFit(np.zeros(2), StepCurve([], [], 0.0), ("X1",), True)
    times = np.quantile(data.time, [0.2, 0.4, 0.6])
    for z in (0, 1):
        phi = aipcw_response(data, times, censoring_km(data), flat, z)
        alive = (data.time[:, None] > times[None, :]) & (data.group == z)[:, None]
        np.testing.assert_allclose(phi[alive], 1.0, atol=1e-12)


def test_aiptw_forms_agree_without_censoring(sample):
    data = make_data(sample.time, np.ones(sample.n, int), sample.group, sample.covariates,
                     sample.covariate_names)
    a = estimate("AIPTW", data, OUT, TRT)
    b = estimate("AIPTW", data, OUT, TRT, aiptw_censoring="ipcw")
    for z in (0, 1):
        _same(a.curve(z), b.curve(z), atol=1e-12)
