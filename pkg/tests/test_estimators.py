import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elope.data import Dataset, WeightRange
from elope.estimators import (
    EstimationError,
    beta_bounds,
    beta_objective,
    bias_bound,
    clipped_dr_const_half,
    el_estimate,
    el_value_difference,
    emp_estimate,
    ips,
    snips,
    solve_beta_star,
)
from elope.solvers import Interval1D, grid_oracle_1d, primal_profile_oracle

from helpers import random_dataset


def ds_(w, r, w_max=None):
    w_max = w_max if w_max is not None else max(1.0, max(w))
    return Dataset(w, r, WeightRange(0.0, w_max))


# ---------------------------------------------------------------- baselines


def test_ips_examples():
    assert ips(ds_([1, 1], [0.2, 0.4])) == pytest.approx(0.3)
    assert ips(ds_([0, 0, 2], [0, 0, 1])) == pytest.approx(2 / 3)
    assert ips(ds_([1000], [1])) == 1000.0


def test_empty_dataset_errors():
    empty = Dataset([], [], WeightRange(0, 2))
    for fn in (ips, clipped_dr_const_half, el_estimate):
        with pytest.raises(EstimationError):
            fn(empty)


def test_snips_examples():
    assert snips(ds_([0, 0, 2], [0, 0, 1])) == 1.0
    assert snips(ds_([1, 1, 1], [0.1, 0.5, 0.9])) == pytest.approx(0.5)
    with pytest.raises(EstimationError):
        snips(ds_([0, 0, 0], [0.1, 0.2, 0.3], 2))


def test_clipped_dr_examples():
    assert clipped_dr_const_half(ds_([1] * 3, [1] * 3)) == 1.0
    assert clipped_dr_const_half(ds_([0, 0], [0.9, 0.1], 2)) == 0.5
    assert clipped_dr_const_half(ds_([2, 0], [1, 0])) == 1.0


# ---------------------------------------------------------------- beta*


@pytest.mark.parametrize("w", [[1, 1, 1], [0, 2]])
def test_beta_zero_when_weights_average_one(w):
    assert solve_beta_star(ds_(w, [0.5] * len(w))) == 0.0


def test_beta_hand_solved():
    assert solve_beta_star(ds_([0, 0, 2], [0, 0, 1])) == pytest.approx(-1 / 3, abs=1e-12)


def test_beta_matches_grid_oracle():
    rng = np.random.default_rng(11)
    for _ in range(15):
        ds = random_dataset(rng, 20)
        lo, hi = beta_bounds(ds)
        lo, hi = max(lo, -1e3), min(hi, 1e3)
        g = grid_oracle_1d(beta_objective(ds), Interval1D(lo, hi), 1e-5)
        b = solve_beta_star(ds)
        f = beta_objective(ds)
        # compare by position; ties within the grid step are measured by value
        assert abs(b - g.x) <= 1e-4 or f(b) >= g.value - 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_beta_sign_property(seed):
    ds = random_dataset(np.random.default_rng(seed), 15)
    b = solve_beta_star(ds)
    s = float(np.sum(ds.counts * (ds.w - 1)))
    assert b == 0.0 or math.copysign(1, b) == math.copysign(1, s)


# ---------------------------------------------------------------- EL estimate


def test_el_all_weights_one_is_ips():
    ds = ds_([1] * 4, [0.1, 0.2, 0.6, 1.0])
    for rho in (0.0, 0.5, 1.0):
        est = el_estimate(ds, rho)
        assert est.is_point
        assert est.value == pytest.approx(ips(ds))


def test_el_both_extremes_present():
    est = el_estimate(ds_([0, 0, 2], [0, 0, 1]), 0.3)
    assert est.is_point
    assert est.value == pytest.approx(1.0, abs=1e-12)
    assert est.beta_star == pytest.approx(-1 / 3)


def test_el_unobserved_mass_gets_rho():
    ds = ds_([0], [0], 2)
    est = el_estimate(ds, 0.7)
    assert not est.is_point
    assert est.lo == pytest.approx(0.0, abs=1e-12)
    assert 0 < est.hi <= 1
    assert est.value == pytest.approx(0.7 * est.hi, abs=1e-12)
    # the primal places all mass on (0, 0) and (2, rho): E[w] = 1 needs half on each
    assert est.hi == pytest.approx(1.0, abs=1e-9)
    ll = primal_profile_oracle(ds, 0.7, support_grid=[(2.0, 0.7)])
    assert np.isfinite(ll)


def test_el_rho_validation():
    with pytest.raises(ValueError):
        el_estimate(ds_([1], [0.5]), 1.5)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 100_000), st.floats(0, 1))
def test_el_range_and_affine_in_rho(seed, rho):
    ds = random_dataset(np.random.default_rng(seed), 20)
    est = el_estimate(ds, rho)
    assert 0.0 <= est.lo <= est.hi <= 1.0
    assert est.lo <= est.value <= est.hi
    assert est.value == pytest.approx(est.lo + rho * (est.hi - est.lo), abs=1e-12)
    assert est.is_point == (est.hi - est.lo <= 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_el_equals_ips_when_beta_zero(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 10))
    ds = ds_([1.0] * n, rng.uniform(0, 1, n))
    assert el_estimate(ds, float(rng.uniform())).value == pytest.approx(ips(ds), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 100_000))
def test_el_and_emp_coincide_with_both_extremes(seed):
    rng = np.random.default_rng(seed)
    w_max = float(rng.choice([2.0, 10.0, 1000.0]))
    n = int(rng.integers(0, 12))
    w = np.concatenate([[0.0, w_max], rng.uniform(0, w_max, n)])
    ds = Dataset(w, rng.uniform(0, 1, n + 2), WeightRange(0.0, w_max))
    est = el_estimate(ds)
    assert est.is_point
    assert abs(est.value - emp_estimate(ds)) <= 1e-9


# ---------------------------------------------------------------- EMP and R-hat


def test_emp_examples():
    assert emp_estimate(ds_([1, 1], [0.2, 0.8])) == pytest.approx(0.5)
    assert emp_estimate(ds_([0, 0, 2], [0, 0, 1])) == pytest.approx(1.0)
    ds = ds_([0], [1], 2)
    assert emp_estimate(ds) != pytest.approx(el_estimate(ds).value)


def test_value_difference_examples():
    assert el_value_difference(ds_([1, 1, 1], [0.1, 0.5, 1.0])) == 0.0
    assert el_value_difference(ds_([0, 2, 5], [0.4] * 3), 0.4) == pytest.approx(0.0, abs=1e-15)
    assert el_value_difference(ds_([0, 0, 2], [0, 0, 1]), 0.0) == pytest.approx(0.5)


def test_bias_bound_arithmetic():
    assert bias_bound(100, 1) == pytest.approx(1.16)
    assert bias_bound(10**6, 100) == pytest.approx(0.1016)
    assert bias_bound(10, 1000) == pytest.approx(1700.0)
    with pytest.raises(ValueError):
        bias_bound(0, 2)
