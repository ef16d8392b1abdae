import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffcontact.contact import (ContactModel, Obstacle, damping_ramp, evaluate_contacts, friction_linear,
                                 friction_tanh, tangent_basis)

OBSTACLES = {
    "plane": Obstacle(),
    "tilted": Obstacle(normal=np.array([0.0, np.sin(0.3), np.cos(0.3)])),
    "sphere": Obstacle(kind="sphere", point=np.array([0.0, 0.0, -1.2]), radius=1.0),
    "bowl": Obstacle(kind="sphere", point=np.zeros(3), radius=0.95, inside=True),
}


def _points(obs, rng, m):
    # points slightly inside the obstacle (penetrating) at random spots
    if obs.kind == "plane":
        y = rng.normal(size=(m, 3)) * 0.05
        return y + obs.normal * (-0.01 + 0.002 * rng.normal(size=m) - y @ obs.normal)[:, None]
    d = rng.normal(size=(m, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    r = obs.radius * (1.01 if obs.inside else 0.99)
    return obs.point + r * d


def _fd(F, y, v, h=1e-7):
    m = len(y)
    fy = np.zeros((m, 3, 3))
    fv = np.zeros((m, 3, 3))
    for k in range(3):
        E = np.zeros((m, 3))
        E[:, k] = h
        fy[:, :, k] = (F(y + E, v).f - F(y - E, v).f) / (2 * h)
        fv[:, :, k] = (F(y, v + E).f - F(y, v - E).f) / (2 * h)
    return fy, fv


@pytest.mark.parametrize("variant", ["linear", "tanh"])
@pytest.mark.parametrize("obs_name", sorted(OBSTACLES))
def test_contact_derivatives_match_fd(variant, obs_name):
    obs = OBSTACLES[obs_name]
    rng = np.random.default_rng(7)
    m = 6
    y = _points(obs, rng, m)
    v = rng.normal(size=(m, 3)) * np.array([[1e-3], [1e-2], [0.1], [1.0], [1e-4], [3.0]])
    model = ContactModel(variant=variant, k_n=1000.0)
    cf = np.full(m, 0.4)
    kd = np.full(m, 3.0)

    def F(y, v, cf=cf, kd=kd):
        g, n, dn = obs.gap(y)
        return evaluate_contacts(g, n, dn, v, cf, kd, model, 16.0)

    b = F(y, v)
    fy, fv = _fd(F, y, v)
    assert np.allclose(fy, b.df_dy, atol=1e-5 * np.abs(b.df_dy).max())
    assert np.allclose(fv, b.df_dv, atol=1e-5 * np.abs(b.df_dv).max())
    fc = (F(y, v, cf + 1e-7).f - F(y, v, cf - 1e-7).f) / 2e-7
    fk = (F(y, v, cf, kd + 1e-7).f - F(y, v, cf, kd - 1e-7).f) / 2e-7
    assert np.allclose(fc, b.df_dcf, atol=1e-6)
    assert np.allclose(fk, b.df_dkd, atol=1e-6)


def test_damping_ramp_derivative_inside_ramp():
    # damping fades in smoothly; derivatives hold inside the ramp zone too
    model = ContactModel(k_n=1000.0, damping_ramp=1e-3)
    obs = Obstacle()
    y = np.array([[0.0, 0.0, -3e-4], [0.1, 0.0, -7e-4]])
    v = np.array([[0.1, 0.0, -0.5], [0.0, 0.2, 0.3]])

    def F(y, v):
        g, n, dn = obs.gap(y)
        return evaluate_contacts(g, n, dn, v, 0.5, 10.0, model, 5.0)

    b = F(y, v)
    fy, fv = _fd(F, y, v, 1e-9)
    assert np.allclose(fy, b.df_dy, rtol=1e-5, atol=1e-4)
    assert np.allclose(fv, b.df_dv, rtol=1e-6, atol=1e-6)


@given(st.floats(-1e-3, 1e-3))
def test_damping_ramp_continuous_and_bounded(g):
    w, dw = damping_ramp(np.array([g]), 1e-4)
    assert 0.0 <= w[0] <= 1.0
    assert dw[0] <= 0.0
    if g >= 0:
        assert w[0] == 0.0 and dw[0] == 0.0
    if g <= -1e-4:
        assert w[0] == 1.0 and dw[0] == 0.0


vec3 = arrays(np.float64, 3, elements=st.floats(-10, 10))


@given(vec3, st.floats(0.0, 100.0), st.floats(0.0, 2.0), st.floats(1e-3, 1e4))
def test_friction_never_exceeds_coulomb_limit(xdot, fn, cf, kt):
    n = np.array([0.0, 0.0, 1.0])
    for f in (friction_linear(xdot, n, fn, cf, kt), friction_tanh(xdot, n, fn, cf, kt)):
        assert np.linalg.norm(f) <= cf * fn * (1 + 1e-12) + 1e-15
        assert abs(f @ n) <= 1e-12 * (1 + np.linalg.norm(f))
        # friction opposes tangential motion
        assert f @ xdot <= 1e-12


@given(st.integers(0, 2**31 - 1), st.sampled_from(["linear", "tanh"]))
def test_batch_coulomb_invariant(seed, variant):
    rng = np.random.default_rng(seed)
    m = 8
    obs = Obstacle()
    y = rng.normal(size=(m, 3)) * 0.01
    v = rng.normal(size=(m, 3)) * 10 ** rng.uniform(-5, 1, size=(m, 1))
    g, n, dn = obs.gap(y)
    b = evaluate_contacts(g, n, dn, v, 0.4, 2.0, ContactModel(variant, k_n=500.0), 10.0)
    assert np.all(np.linalg.norm(b.ft, axis=1) - 0.4 * b.fn <= 1e-9)
    assert np.all(b.fn >= 0) and np.all(b.fn[g >= 0] == 0)
    assert np.all(b.f[g >= 0] == 0)


@given(arrays(np.float64, 3, elements=st.floats(-1, 1)).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_tangent_basis_orthonormal(v):
    n = v / np.linalg.norm(v)
    T = tangent_basis(n)
    B = np.vstack([T, n])
    assert np.allclose(B @ B.T, np.eye(3), atol=1e-12)


def test_model_validation():
    with pytest.raises(ValueError):
        ContactModel(variant="magic")
    with pytest.raises(ValueError):
        ContactModel(k_n=-1.0)
    with pytest.raises(ValueError):
        Obstacle(normal=np.array([0.0, 0.0, 2.0]))
    assert ContactModel(k_n=100.0).tangential_stiffness(0.01) == pytest.approx(1.0)
