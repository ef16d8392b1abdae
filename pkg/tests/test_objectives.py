import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import scenes
from conftest import central_fd
from diffcontact.integrator import Integrator, simulate
from diffcontact.objectives import (ControlSmoothness, Feature, LinePathTarget, Objective, PoseTarget,
                                    TerminalPointTarget, TrajectoryMatch, add_uniform_noise, read_markers_csv,
                                    record_markers, write_markers_csv)
from diffcontact.sensitivity import adjoint_sweep, sensitivity_sweep


def _mixed_objective(system, n):
    feats = [Feature("tor", "node", node=3), Feature("C", "point", local=[0.1, 0.0, 0.05]), Feature("pm"),
             Feature("tor", "com")]
    rng = np.random.default_rng(0)
    targets = rng.normal(size=(n + 1, len(feats), 3)) * 0.1
    targets[::3, 1] = np.nan  # missing observations
    return Objective([
        TerminalPointTarget(Feature("C", "com"), [0.5, 0.0, 0.2], weight=2.0),
        LinePathTarget(Feature("pm"), [0.3, 0.0, 0.0], [0.0, 0.0, 1.0], steps=(2, None)),
        TrajectoryMatch(feats, targets, weight=0.5),
        PoseTarget([Feature("C", "com")], [[0.4, 0.0, 0.1]], upright_body="C", upright_weight=0.3),
        ControlSmoothness([[3], [4]], beta=0.1),
    ])


def test_objective_partials_match_fd():
    system = scenes.mixed()
    integ = Integrator("BDF2", 0.01)
    n = 8
    tr = simulate(system, integ, None, n)
    obj = _mixed_objective(system, n)
    phi, dq, dp = obj.evaluate(tr)
    # partials w.r.t. the final state
    q_last = tr.states[-1].q.copy()

    def phi_of(qn):
        tr.states[-1].q = qn
        return obj.value(tr)

    g = central_fd(phi_of, q_last, 1e-7)
    tr.states[-1].q = q_last
    assert np.allclose(g, dq[-1], atol=1e-6 * max(1.0, np.abs(g).max()))
    # gradients through the simulation
    grad = adjoint_sweep(tr, dq, dp).gradient
    p0 = tr.p.copy()

    def total(p):
        return obj.value(simulate(system, integ, p, n, keep_products=False), p)

    fd = central_fd(total, p0, 1e-6)
    assert np.allclose(grad, fd, rtol=1e-5, atol=1e-7 * np.abs(fd).max())
    # Gauss-Newton residuals reproduce phi and its gradient
    r, J = obj.least_squares(tr, tr.p, sensitivity_sweep(tr))
    assert r @ r == pytest.approx(phi, rel=1e-12)
    assert np.allclose(2 * J.T @ r, grad, rtol=1e-9, atol=1e-12)


def test_step_selection_and_errors():
    system = scenes.point_mass_drop()
    tr = simulate(system, Integrator("BDF1", 0.01), None, 5)
    f = Feature("pm")
    t_last = TerminalPointTarget(f, [0, 0, 0])
    t_neg = TerminalPointTarget(f, [0, 0, 0], step=-1)
    assert Objective([t_last]).value(tr) == Objective([t_neg]).value(tr)
    with pytest.raises(ValueError):
        Objective([TerminalPointTarget(f, [0, 0, 0], step=9)]).value(tr)
    with pytest.raises(ValueError):
        Objective([TerminalPointTarget(f, [0, 0, 0], weight=-1.0)])
    with pytest.raises(ValueError):
        Feature("pm", kind="edge")


def test_feature_rules():
    system = scenes.tumbling_box()
    system.finalize(0.01)
    q, _, _, _ = system.initial_state()
    with pytest.raises(ValueError):
        Feature("box", "node").evaluate(system, q)
    y, cols, U = Feature("box", "point", local=[0.1, 0, 0]).evaluate(system, q)
    assert U.shape == (3, len(cols))


@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_markers_csv_roundtrip(n_s, n_m, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(n_s, n_m, 3))
    assert np.array_equal(read_markers_csv(write_markers_csv(m)), m)


@given(st.floats(0.0, 0.1), st.integers(0, 1000))
def test_uniform_noise_is_bounded_and_seeded(level, seed):
    m = np.zeros((5, 3, 3))
    a = add_uniform_noise(m, level, seed)
    assert np.all(a[0] == 0)
    assert np.all(np.abs(a) <= level)
    assert np.array_equal(a, add_uniform_noise(m, level, seed))


def test_record_markers_shape():
    system = scenes.soft_ball()
    tr = simulate(system, Integrator("BDF2", 1 / 60), None, 4)
    mk = record_markers(tr, [Feature("ball", "node", node=i) for i in range(3)])
    assert mk.shape == (5, 3, 3)
    assert np.allclose(mk[-1, 1], tr.q[-1][3:6])
