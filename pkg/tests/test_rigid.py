import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import central_fd
from diffcontact import rigid

vec6 = arrays(np.float64, 6, elements=st.floats(-1.5, 1.5))


def _body():
    return rigid.RigidBody(mass=2.0, inertia=np.diag([1.0, 2.0, 3.0]))


@given(vec6)
def test_generalized_mass_symmetric_positive(q):
    M = rigid.generalized_mass(_body(), q)
    assert np.allclose(M, M.T, atol=1e-12)
    assert np.linalg.eigvalsh(M).min() > 0


@given(vec6, vec6)
def test_fictitious_force_from_lagrangian(q, v):
    # C = dM/dt v - 1/2 d(v^T M v)/dq
    b = _body()
    M = lambda x: rigid.generalized_mass(b, x)  # noqa: E731
    Mdot = np.einsum("abk,k->ab", central_fd(M, q), v)
    C = Mdot @ v - 0.5 * central_fd(lambda x: v @ M(x) @ v, q)
    assert np.allclose(C, rigid.fictitious_force(b, q, v), atol=1e-6)


@given(vec6, vec6, vec6)
def test_inertial_residual_derivatives(q, v, a):
    b = _body()
    r, dq, dv, da = rigid.inertial_residual(b, q, v, a)
    assert np.allclose(r, rigid.generalized_mass(b, q) @ a + rigid.fictitious_force(b, q, v), atol=1e-10)
    assert np.allclose(central_fd(lambda x: rigid.inertial_residual(b, x, v, a)[0], q), dq, atol=1e-5)
    assert np.allclose(central_fd(lambda x: rigid.inertial_residual(b, q, x, a)[0], v), dv, atol=1e-5)
    assert np.allclose(da, rigid.generalized_mass(b, q), atol=1e-12)


@given(vec6, vec6)
def test_contact_point_kinematics(q, v):
    xb = np.array([0.3, 0.1, -0.2])
    x, xd, W, dxd, _ = rigid.contact_point_kinematics(q, v, xb)
    assert np.allclose(central_fd(lambda z: rigid.contact_point_kinematics(z, v, xb)[0], q), W, atol=1e-7)
    assert np.allclose(central_fd(lambda z: rigid.contact_point_kinematics(z, v, xb)[1], q), dxd, atol=1e-6)
    assert np.allclose(xd, W @ v, atol=1e-12)


@given(vec6)
def test_world_force_mapping_is_virtual_work(q):
    # Q . dq = f . dx + tau . omega for the mapped generalized force
    rng = np.random.default_rng(0)
    f, tau, dq = rng.normal(size=3), rng.normal(size=3), rng.normal(size=6)
    xb = np.array([0.3, 0.1, -0.2])
    Q, dQ = rigid.map_world_force(q, f, tau, xb)
    x, xd, W, _, _ = rigid.contact_point_kinematics(q, dq, xb)
    from diffcontact.rotation import rotation_and_jacobian

    omega = rotation_and_jacobian(q[3:])[1] @ dq[3:]
    assert np.isclose(Q @ dq, f @ xd + tau @ omega, atol=1e-10)
    assert np.allclose(central_fd(lambda z: rigid.map_world_force(z, f, tau, xb)[0], q), dQ, atol=1e-6)


@pytest.mark.parametrize("k_d", [0.0, 10.0, 40.0])
def test_rebound_matches_analytic_ratio(k_d):
    e = rigid.simulate_rebound(1000.0, k_d, 1.0)
    assert abs(e - rigid.restitution_ratio(1000.0, k_d, 1.0)) <= 0.01 * rigid.restitution_ratio(1000.0, k_d, 1.0)


def test_restitution_rejects_overdamping():
    with pytest.raises(ValueError):
        rigid.restitution_ratio(1.0, 10.0, 1.0)
