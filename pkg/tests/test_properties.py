"""Property-based checks of the model invariants."""

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tsvis.dispatch import DispatchInfeasible, DispatchInput, check_feasibility, solve_vis
from tsvis.features import RAW_WIDTH, WIDTH, intensity_map, upsample
from tsvis.grid import kron_reduce, load_case
from tsvis.igdt import AceInput, RobustInput, compute_ace, solve_robust_vis, worst_case_demand
from tsvis.predictor import Classifier
from tsvis.risk import DurationDistribution, instability_probability, line_fault_probability
from tsvis.tds import SWEEP_K, SWEEP_TAU, classify_tis, draw_scenarios

from conftest import make_case, sg
from oracles import brute_force_tis, random_small_case
from test_tds import synthetic

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
seeds = st.integers(0, 2 ** 31 - 1)
SLOW = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])


# ---------------------------------------------------------------- time-domain labels

@settings(deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 30), st.integers(1, 6)), elements=finite))
def test_tis_matches_brute_force(delta):
    lab = classify_tis(synthetic(delta))
    lam, cls = brute_force_tis(delta)
    assert lab.lambda_max == lam and lab.cls == cls
    assert lab.lambda_max >= 0
    assert (lab.cls == 1) == (lab.margin <= 0)


_CASE39 = load_case("case39")


@given(seeds, st.integers(1, 30))
def test_drawn_scenarios_stay_in_sweep_ranges(seed, count):
    for s in draw_scenarios(_CASE39, count, seed):
        assert SWEEP_TAU[0] <= s.duration <= SWEEP_TAU[1]
        assert 0.0 <= s.location <= 1.0
        assert SWEEP_K[0] <= s.load_scale <= SWEEP_K[1]
        assert s.t_start >= 0


# ---------------------------------------------------------------- network reduction

@given(seeds, st.integers(2, 8), st.integers(1, 4))
def test_kron_reduction_is_schur_complement(seed, n_int, n_ret):
    rng = np.random.default_rng(seed)
    n = n_int + n_ret
    # random connected admittance matrix with shunts so the interior block is invertible
    y = rng.uniform(0.5, 5.0, (n, n)) * (rng.random((n, n)) < 0.7)
    y = np.triu(y, 1)
    y = y + y.T
    Y = -1j * y
    Y[np.diag_indices(n)] = 1j * y.sum(axis=1) + rng.uniform(0.1, 1.0, n) - 0.1j
    ret = np.sort(rng.choice(n, n_ret, replace=False))
    red = kron_reduce(Y, ret)
    keep = np.setdiff1d(np.arange(n), ret)
    ref = Y[np.ix_(ret, ret)] - Y[np.ix_(ret, keep)] @ np.linalg.inv(Y[np.ix_(keep, keep)]) @ Y[np.ix_(keep, ret)]
    np.testing.assert_allclose(red, ref, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(red, red.T, atol=1e-9)


# ---------------------------------------------------------------- dispatch

@SLOW
@given(seeds)
def test_dispatch_solution_invariants(seed):
    case = random_small_case(np.random.default_rng(seed))
    sol = solve_vis(case)
    assert np.all(sol.to_vector() >= -1e-9)
    assert sol.kkt_residual <= 1e-8
    assert check_feasibility(sol, DispatchInput.from_case(case), case, tol=1e-6) == []


@SLOW
@given(seeds, st.floats(0.0, 0.2))
def test_dispatch_cost_nondecreasing_in_demand(seed, extra):
    case = random_small_case(np.random.default_rng(seed))
    base = DispatchInput.from_case(case)
    lo = solve_vis(case, base).total_cost
    try:
        hi = solve_vis(case, base.scaled_to(base.demand * (1 + extra))).total_cost
    except DispatchInfeasible:
        return
    assert hi >= lo - 1e-9 * max(1.0, abs(lo))


# ---------------------------------------------------------------- IGDT and ACE

@given(st.floats(-1.0, 1.0), st.floats(-2.0, -1e-3), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_ace_increases_with_frequency_deviation(tie, bias, df1, df2):
    a1 = compute_ace(AceInput(tie, bias, df1))
    a2 = compute_ace(AceInput(tie, bias, df2))
    assert (a1 - a2) * (df1 - df2) >= 0
    # under-frequency pulls ACE below the tie-flow term (checked at zero tie flow to avoid rounding)
    assume(abs(df1) > 1e-300)
    assert np.sign(compute_ace(AceInput(0.0, bias, df1))) == np.sign(df1)


@given(st.floats(1e-3, 1e3), st.floats(0.0, 10.0))
def test_worst_case_demand_dominates_forecast(p_hat, sigma):
    assert worst_case_demand(p_hat, sigma) >= p_hat


def _toy():
    return make_case([1], [], [sg(1, c2=1.0, c1=0.5, c0=0.2, p_max=100.0, prev_output=2.0, ramp_up=100.0,
                                 ramp_down=100.0)], {1: 2.0}, slack_bus=1)


_TOY = _toy()
_TOY_NOMINAL = solve_vis(_TOY).total_cost


@SLOW
@given(st.floats(1.0, 3.0), st.floats(0.0, 2.0), st.floats(0.0, 1.0))
def test_sigma_monotone_in_budget(c_lo, bump, theta):
    c_lo *= _TOY_NOMINAL
    lo = solve_robust_vis(_TOY, RobustInput(2.0, theta, c_lo), tol_sigma=1e-6)
    hi = solve_robust_vis(_TOY, RobustInput(2.0, theta, c_lo * (1 + bump)), tol_sigma=1e-6)
    for r in (lo, hi):
        assert r.sigma_star >= 0 and r.worst_case_cost <= r.budget * (1 + 1e-12)
    assert hi.sigma_star >= lo.sigma_star - 2e-6


# ---------------------------------------------------------------- risk

ccts = arrays(float, st.integers(1, 8), elements=st.floats(-2.0, 12.0))


@given(ccts, st.data())
def test_theta_in_unit_interval_and_nonincreasing(cct, data):
    rates = data.draw(arrays(float, cct.size, elements=st.floats(0.01, 5.0)))
    d = DurationDistribution()
    r = instability_probability(cct, rates, d)
    assert 0.0 <= r.theta <= 1.0 and np.all(r.contribution >= 0)
    j = data.draw(st.integers(0, cct.size - 1))
    up = cct.copy()
    up[j] += data.draw(st.floats(0.0, 3.0))
    assert instability_probability(up, rates, d).theta <= r.theta + 1e-15


@given(ccts, st.floats(1e-3, 1e3), st.data())
def test_theta_invariant_to_rate_scale(cct, scale, data):
    rates = data.draw(arrays(float, cct.size, elements=st.floats(0.01, 5.0)))
    d = DurationDistribution()
    a = instability_probability(cct, rates, d).theta
    b = instability_probability(cct, rates * scale, d).theta
    assert b == pytest.approx(a, rel=1e-12, abs=1e-15)


@given(arrays(float, st.integers(1, 50), elements=st.floats(0.0, 10.0)))
def test_line_probabilities_normalise(rates):
    assume(rates.sum() > 0)
    assert abs(line_fault_probability(rates).sum() - 1.0) <= 1e-12


# ---------------------------------------------------------------- features

@given(arrays(float, st.tuples(st.integers(1, 5), st.just(RAW_WIDTH)), elements=finite))
def test_upsample_endpoints_and_hull(raw):
    up = upsample(raw)
    assert up.shape == (raw.shape[0], WIDTH)
    np.testing.assert_array_equal(up[:, 0], raw[:, 0])
    np.testing.assert_array_equal(up[:, -1], raw[:, -1])
    span = 1e-12 * (1 + np.abs(raw).max())
    assert np.all(up >= raw.min(axis=1, keepdims=True) - span)
    assert np.all(up <= raw.max(axis=1, keepdims=True) + span)


@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(2, 40)), elements=finite))
def test_intensity_in_unit_interval(x):
    out = intensity_map(x)
    assert out.shape == x.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


# ---------------------------------------------------------------- inference

_CLF = Classifier(*Classifier.init(6, 30, seed=2, dim=8), {"mu": np.zeros(6), "sd": np.ones(6)})


@settings(deadline=None)
@given(arrays(float, (3, 6, 30), elements=st.floats(-50, 50)))
def test_softmax_sums_to_one_and_is_deterministic(X):
    p = _CLF.predict_proba(X)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_array_equal(p, _CLF.predict_proba(X.copy()))
