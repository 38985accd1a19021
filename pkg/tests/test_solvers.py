import math

import numpy as np
import pytest

from elope.data import Dataset, WeightRange
from elope.elci import lower_bound_objective, ci_lower
from elope.estimators import beta_bounds, beta_objective
from elope.solvers import (
    Interval1D,
    SolverError,
    grid_oracle_1d,
    grid_oracle_2d,
    maximize_concave_1d,
    maximize_concave_2d_constrained,
    primal_profile_oracle,
)


def test_1d_quadratic_vertex():
    rep = maximize_concave_1d(lambda x: -((x - 0.3) ** 2), Interval1D(0, 1), tol=1e-8)
    assert rep.x == pytest.approx(0.3, abs=1e-8)
    assert rep.tolerance_met


def test_1d_symmetric_log_barrier():
    def f(x):
        if abs(x) >= 1:
            return -math.inf
        return math.log1p(x) + math.log1p(-x)

    rep = maximize_concave_1d(f, Interval1D(-1, 1), tol=1e-10)
    assert rep.x == pytest.approx(0.0, abs=1e-9)


def test_1d_el_likelihood():
    ds = Dataset([0, 0, 2], [0, 0, 1], WeightRange(0, 2))
    lo, hi = beta_bounds(ds)
    f = beta_objective(ds)
    rep = maximize_concave_1d(f, Interval1D(lo * (1 - 1e-9), hi * (1 - 1e-9)), tol=1e-12)
    assert rep.x == pytest.approx(-1 / 3, abs=1e-9)
    grid = grid_oracle_1d(f, Interval1D(lo * (1 - 1e-9), hi * (1 - 1e-9)), 1e-5)
    assert grid.x == pytest.approx(-1 / 3, abs=1e-5)


def test_1d_boundary_maximum():
    rep = maximize_concave_1d(lambda x: x, Interval1D(0, 2), tol=1e-10)
    assert rep.x == pytest.approx(2.0, abs=1e-9)


def test_1d_flat_stretch_returns_its_middle():
    rep = maximize_concave_1d(lambda x: min(x, 1.0, 3.0 - x), Interval1D(0, 4), tol=1e-9)
    assert 1.0 - 1e-6 <= rep.x <= 2.0 + 1e-6


def test_empty_interval():
    with pytest.raises(SolverError):
        Interval1D(1.0, 0.0)


def test_2d_unconstrained_like():
    f = lambda z: -z[0] ** 2 - z[1] ** 2
    rep = maximize_concave_2d_constrained(f, [(0.0, -1.0, 0.0)], init=(1.0, 1.0), tol=1e-9)
    np.testing.assert_allclose(rep.argmax, [0, 0], atol=1e-4)
    assert rep.value == pytest.approx(0.0, abs=1e-8)


def test_2d_projection_onto_line():
    f = lambda z: -((z[0] - 2) ** 2) - (z[1] - 2) ** 2
    rep = maximize_concave_2d_constrained(f, [(1.0, 1.0, 2.0)], init=(0.0, 0.0), tol=1e-10)
    np.testing.assert_allclose(rep.argmax, [1, 1], atol=1e-5)
    assert rep.tolerance_met


def test_2d_phase_one_from_infeasible_init():
    f = lambda z: -((z[0] - 2) ** 2) - (z[1] - 2) ** 2
    rep = maximize_concave_2d_constrained(f, [(1.0, 1.0, 2.0)], init=(5.0, 5.0), tol=1e-10)
    np.testing.assert_allclose(rep.argmax, [1, 1], atol=1e-5)


def test_2d_infeasible_constraints():
    f = lambda z: -z[0] ** 2
    with pytest.raises(SolverError):
        maximize_concave_2d_constrained(f, [(1.0, 0.0, -1.0), (-1.0, 0.0, -1.0)], init=(0.0, 0.0))


def test_2d_unbounded():
    f = lambda z: z[0] + z[1]
    with pytest.raises(SolverError):
        maximize_concave_2d_constrained(f, [(0.0, -1.0, 0.0)], init=(1.0, 1.0), grad=lambda z: np.ones(2), hess=lambda z: np.zeros((2, 2)))


def test_2d_stop_above_exits_early():
    f = lambda z: -((z[0] - 2) ** 2) - (z[1] - 2) ** 2
    rep = maximize_concave_2d_constrained(f, [(1.0, 1.0, 2.0)], init=(0.0, 0.0), stop_above=-10.0)
    assert rep.value >= -10.0


def test_2d_lower_bound_objective_matches_grid():
    ds = Dataset([0.0, 0.5, 1.0, 2.0, 3.0], [0.2, 1.0, 0.0, 0.7, 0.4], WeightRange(0, 4))
    f, grid_f = lower_bound_objective(ds, 0.95)
    v, sol = ci_lower(ds, 0.95)
    box = ((sol.beta - 0.05, sol.beta + 0.05), (sol.gamma - 0.05, sol.gamma + 0.05))
    g = grid_oracle_2d(grid_f, box, 1e-4)
    assert abs(g.value - v) <= 1e-3
    np.testing.assert_allclose(g.argmax, [sol.beta, sol.gamma], atol=2e-3)


def test_grid_1d_includes_endpoint():
    rep = grid_oracle_1d(lambda x: x, Interval1D(0, 1), 0.25)
    assert rep.x == 1.0


def test_grid_1d_agrees_with_bisection():
    f = lambda x: -((x - 0.123456) ** 2)
    a = grid_oracle_1d(f, Interval1D(-1, 1), 1e-4).x
    b = maximize_concave_1d(f, Interval1D(-1, 1), tol=1e-10).x
    assert abs(a - b) <= 1e-4


def test_primal_oracle_unconstrained_mle():
    ds = Dataset([1.0] * 4, [0.1, 0.2, 0.3, 0.4], WeightRange(0, 2))
    val = primal_profile_oracle(ds, float(np.mean(ds.r)))
    assert val == pytest.approx(-4 * math.log(4), abs=1e-6)


def test_primal_oracle_strong_duality_at_estimate():
    ds = Dataset([0, 0, 2], [0, 0, 1], WeightRange(0, 2))
    # the dual value 2 log(4/3) + log(2/3) is the log-likelihood deficit below -N log N
    val = primal_profile_oracle(ds, 1.0)
    assert -3 * math.log(3) - val == pytest.approx(2 * math.log(4 / 3) + math.log(2 / 3), abs=1e-6)


def test_primal_oracle_infeasible_value():
    ds = Dataset([0.5, 1.5], [0.3, 0.6], WeightRange(0, 2))
    assert primal_profile_oracle(ds, 2.5) == -math.inf
