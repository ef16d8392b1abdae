import numpy as np
import pytest

import scenes
from diffcontact.integrator import Integrator, simulate
from diffcontact.sensitivity import adjoint_sweep, direct_gradient, gradient_check, sensitivity_sweep

CASES = {
    "point_mass": (scenes.point_mass_drop, Integrator("BDF2", 0.01), 50),
    "soft_ball": (scenes.soft_ball, Integrator("BDF2", 1 / 60), 30),
    "tumbling_box": (scenes.tumbling_box, Integrator("BDF2", 0.01), 60),
    "articulated": (scenes.articulated, Integrator("BDF1", 0.01), 30),
    "hybrid_cube": (scenes.incline_cube, Integrator("BDF2", 1 / 60), 30),
}


class LinearObjective:
    """phi = w . q_final + c . q_mid, a simple test objective."""

    def __init__(self, ndof, seed=0):
        rng = np.random.default_rng(seed)
        self.w, self.c = rng.normal(size=ndof), rng.normal(size=ndof)

    def evaluate(self, traj, p):
        dq = np.zeros((traj.n_steps + 1, traj.system.ndof))
        mid = traj.n_steps // 2
        dq[-1], dq[mid] = self.w, self.c
        return traj.q[-1] @ self.w + traj.q[mid] @ self.c, dq, np.zeros(len(p))


@pytest.mark.parametrize("case", sorted(CASES))
def test_adjoint_matches_fd_and_direct(case):
    make, integ, n = CASES[case]
    system = make()
    system.finalize(integ.dt)
    obj = LinearObjective(system.ndof)
    rep = gradient_check(system, integ, obj, system.get_parameters(), n)
    assert rep["max_rel_error"] < 1e-4, rep
    tr = simulate(system, integ, None, n)
    _, dq, dp = obj.evaluate(tr, tr.p)
    ga = adjoint_sweep(tr, dq, dp).gradient
    gd = direct_gradient(tr, dq, dp)
    assert np.abs(ga - gd).max() <= 1e-10 * np.abs(ga).max()


def test_sensitivity_sweep_shapes_and_initial_rows():
    system = scenes.point_mass_drop()
    tr = simulate(system, Integrator("BDF2", 0.01), None, 10)
    S = sensitivity_sweep(tr)
    assert len(S) == 11
    assert S[0].shape == (system.ndof, system.n_params)
    # dq0/d(init_position z) is a unit vector
    assert S[0][2, 0] == 1.0


def test_adjoint_uses_one_solve_per_step():
    system = scenes.soft_ball()
    tr = simulate(system, Integrator("BDF2", 1 / 60), None, 12)
    obj = LinearObjective(system.ndof)
    _, dq, dp = obj.evaluate(tr, tr.p)
    res = adjoint_sweep(tr, dq, dp)
    assert res.n_solves == tr.n_steps
