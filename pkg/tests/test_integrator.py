import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import scenes
from diffcontact.contact import ContactModel, Obstacle
from diffcontact.integrator import (BootstrapError, GeneralizedState, Integrator, NonConvergence, SolverConfig,
                                    discretize, simulate, solve_step)
from diffcontact.rigid import RigidBody
from diffcontact.system import MultiBodySystem, PointMass


@pytest.mark.parametrize("scheme", ["BDF1", "BDF2"])
def test_free_fall_matches_discrete_solution(scheme):
    # constant acceleration: BDF1 has a closed form; the BDF2 start-up transient decays geometrically
    dt, g = 0.01, -9.81
    s = MultiBodySystem([PointMass(2.0, [0, 0, 1.0], [1.0, 0, 0], name="p")])
    tr = simulate(s, Integrator(scheme, dt), None, 50)
    z = tr.q[:, 2]
    if scheme == "BDF1":
        expect = 1.0 + g * dt * dt * np.arange(51) * (np.arange(51) + 1) / 2
        assert np.allclose(z, expect, atol=1e-12)
    acc = (tr.q[2:, 2] - 2 * tr.q[1:-1, 2] + tr.q[:-2, 2]) / dt**2
    err = np.abs(acc - g)
    assert err[-1] < 1e-9
    assert np.all(err[1:] <= err[:-1] + 1e-9)
    assert np.allclose(tr.q[:, 0], np.arange(51) * dt * 1.0, atol=1e-12)
    assert all(info.newton_trace[-1] < 1e-10 for info in tr.info)


@given(st.integers(0, 2**31 - 1), st.sampled_from(["BDF1", "BDF2"]))
def test_free_rigid_body_conserves_linear_momentum(seed, scheme):
    rng = np.random.default_rng(seed)
    b = RigidBody(1.5, np.diag([0.01, 0.02, 0.03]), velocity=rng.normal(size=3), spin=rng.normal(size=3) * 3,
                  rotation=rng.normal(size=3), name="b")
    s = MultiBodySystem([b], gravity=[0, 0, 0])
    tr = simulate(s, Integrator(scheme, 0.01), None, 20)
    assert np.allclose(tr.qd[:, :3], tr.qd[0, :3], atol=1e-9)


def test_fast_spin_triggers_recentering():
    b = RigidBody(1.0, np.diag([0.01, 0.02, 0.03]), position=[0, 0, 1], rotation=[2.5, 0, 0], spin=[30, 1, 0.5],
                  name="sp")
    s = MultiBodySystem([b], gravity=[0, 0, 0])
    tr = simulate(s, Integrator("BDF2", 0.01), None, 40)
    assert any(info.recentered for info in tr.info)
    assert np.all(np.linalg.norm(tr.q[:, 3:], axis=1) <= np.pi + 0.5)


def test_residual_converges_each_step():
    tr = simulate(scenes.soft_ball(), Integrator("BDF2", 1 / 60), None, 20)
    assert all(info.newton_trace[-1] < SolverConfig().eps for info in tr.info)


def test_nonconvergence_reports_step():
    with pytest.raises(NonConvergence) as exc:
        simulate(scenes.soft_ball(), Integrator("BDF2", 1 / 60), None, 20, SolverConfig(max_newton_iters=1))
    assert 1 <= exc.value.step <= 20
    assert f"step {exc.value.step}" in str(exc.value)
    assert exc.value.trace


@pytest.mark.parametrize("mode", ["residual", "active-set"])
def test_hybrid_sticking_cube_holds_still(mode):
    s = scenes.incline_cube("hybrid", 0.8, mode)
    tr = simulate(s, Integrator("BDF2", 1 / 60), None, 40)
    late = tr.info[20:]
    assert all(info.stuck for info in late)
    assert not any(info.fallback for info in tr.info)
    # a node stuck during step i keeps its tangential position from step i - 1
    for i in range(21, 41):
        for cid in tr.info[i - 1].stuck:
            d = tr.system.contact_position(tr.q[i], cid) - tr.system.contact_position(tr.q[i - 1], cid)
            assert np.abs(d[:2]).max() <= 1e-15
    assert max(info.coulomb_violation for info in tr.info) <= 1e-9


def test_hybrid_slips_when_friction_is_low():
    tr = simulate(scenes.incline_cube("hybrid", 0.1), Integrator("BDF1", 1 / 60), None, 30)
    assert tr.q[-1][0::3].mean() > 0.05
    assert max(info.coulomb_violation for info in tr.info) <= 1e-9


def test_solve_step_and_bootstrap():
    s = MultiBodySystem([PointMass(1.0, [0, 0, 1.0], name="p")])
    s.finalize(0.01)
    q0, v0, _, _ = s.initial_state()
    h0 = GeneralizedState(q0, v0, np.zeros(3), 0.0, 0)
    st1 = solve_step(s, [h0], Integrator("BDF1", 0.01))
    assert st1.q[2] == pytest.approx(1.0 - 9.81e-4)
    with pytest.raises(BootstrapError):
        discretize([h0], st1.q, Integrator("BDF2", 0.01))
    with pytest.raises(BootstrapError):
        solve_step(s, [], Integrator("BDF1", 0.01))


def test_integrator_validation():
    with pytest.raises(ValueError):
        Integrator("RK4", 0.01)
    with pytest.raises(ValueError):
        SolverConfig(eps=1e-3, eps_half=1e-4)


def test_point_mass_settles_at_static_penetration():
    s = MultiBodySystem([PointMass(1.0, [0, 0, 0.01], damping=60.0, name="p")],
                        [Obstacle(friction=0.3)], contact=ContactModel("linear", k_n=5000.0))
    tr = simulate(s, Integrator("BDF2", 0.01), None, 200)
    assert tr.q[-1][2] == pytest.approx(-9.81 / 5000.0, rel=1e-6)
