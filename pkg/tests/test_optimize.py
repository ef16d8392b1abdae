"""Optimizer drivers on analytic problems, plus landscape helpers."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from diffcontact.optimize import (FunctionProblem, OptimizationProblem, OptimizerAbort, OptimizerConfig,
                                  grid_local_minima, minimize, sample_landscape)


def quadratic(A, b):
    A = np.asarray(A, float)

    def fun(x):
        r = x - b
        return 0.5 * r @ A @ r, A @ r
    return fun


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def rosen_residuals(x):
    a, b = x
    r = np.array([1 - a, 10 * (b - a * a)])
    J = np.array([[-1.0, 0.0], [-20 * a, 10.0]])
    return r, J


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.1, 10))
def test_lbfgs_quadratic(b, scale):
    A = np.diag([1.0, scale, 3.0])
    prob = FunctionProblem(quadratic(A, np.array(b)), np.zeros(3))
    res = minimize(prob, config=OptimizerConfig(max_simulations=200))
    assert np.allclose(res.p, b, atol=1e-5)
    assert res.phi <= res.phi0


def test_lbfgs_rosenbrock():
    prob = FunctionProblem(rosenbrock, [-1.2, 1.0])
    res = minimize(prob, config=OptimizerConfig(max_simulations=500))
    assert np.allclose(res.p, [1.0, 1.0], atol=1e-4)
    assert res.n_simulations <= 500


def test_gauss_newton_rosenbrock():
    prob = FunctionProblem(rosenbrock, [-1.2, 1.0], residual_fun=rosen_residuals)
    res = minimize(prob, config=OptimizerConfig(method="gauss-newton", max_simulations=200))
    assert np.allclose(res.p, [1.0, 1.0], atol=1e-6)


def test_adam_decreases_and_keeps_best():
    prob = FunctionProblem(quadratic(np.eye(2), np.array([1.0, -2.0])), np.zeros(2))
    res = minimize(prob, config=OptimizerConfig(method="adam", adam_lr=0.1, max_simulations=300))
    assert res.phi < 1e-3 * res.phi0
    assert res.phi == min(h["phi"] for h in res.history)


@pytest.mark.parametrize("method", ["lbfgs", "adam"])
def test_bounds_respected(method):
    # unconstrained minimum at (2, -2) lies outside the box
    prob = FunctionProblem(quadratic(np.eye(2), np.array([2.0, -2.0])), np.zeros(2),
                           lower=[-1.0, -1.0], upper=[1.0, 1.0])
    res = minimize(prob, config=OptimizerConfig(method=method, adam_lr=0.1, max_simulations=300))
    assert np.all(res.p >= -1.0) and np.all(res.p <= 1.0)
    assert np.allclose(res.p, [1.0, -1.0], atol=1e-3)


def test_budget_is_hard_limit():
    prob = FunctionProblem(rosenbrock, [-1.2, 1.0])
    res = minimize(prob, config=OptimizerConfig(max_simulations=7))
    assert res.n_simulations <= 7
    assert res.status == "budget"


def test_unevaluable_start_aborts():
    def bad(x):
        return np.nan, np.zeros_like(x)
    with pytest.raises(OptimizerAbort):
        minimize(FunctionProblem(bad, [0.0]))


def test_unknown_method():
    with pytest.raises(ValueError):
        OptimizerConfig(method="newton")


def test_history_is_monotone_for_lbfgs():
    prob = FunctionProblem(rosenbrock, [-1.2, 1.0])
    res = minimize(prob, config=OptimizerConfig(max_simulations=200))
    phis = [h["phi"] for h in res.history]
    assert all(b <= a for a, b in zip(phis, phis[1:]))
    assert res.to_dict()["phi"] == res.phi


def test_grid_local_minima():
    x, y = np.meshgrid(np.linspace(-2, 2, 21), np.linspace(-2, 2, 21), indexing="ij")
    grid = (x ** 2 - 1) ** 2 + y ** 2
    mins = grid_local_minima(grid)
    assert sorted(mins) == [(5, 10), (15, 10)]
    grid[5, 10] = np.nan
    # non-finite cells are skipped and ignored as neighbours
    after = grid_local_minima(grid)
    assert (5, 10) not in after and (15, 10) in after


def test_sample_landscape_point_mass():
    from scenes import point_mass_drop
    from diffcontact.integrator import Integrator
    from diffcontact.objectives import Feature, Objective, TerminalPointTarget

    system = point_mass_drop()
    obj = Objective([TerminalPointTarget(Feature("pm"), [0.2, 0.0, 0.0])])
    prob = OptimizationProblem(system, Integrator("BDF1", 1e-2), obj, 10, free=system.param_names[:2])
    rows, grid = sample_landscape(prob, [-1, -1], [1, 1], resolution=(3, 4))
    assert grid.shape == (3, 4) and len(rows) == 12
    assert np.all(np.isfinite(grid))
