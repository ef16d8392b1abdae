import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import central_fd
from diffcontact import meshes
from diffcontact.rotation import rotation_matrix, skew
from diffcontact.soft import InvertedElementError, SoftBody

GENERATORS = {
    "cube5": lambda: meshes.cube5(),
    "box": lambda: meshes.box(divisions=(2, 1, 1)),
    "icosphere0": lambda: meshes.icosphere(refine=0),
    "icosphere1": lambda: meshes.icosphere(refine=1),
    "cylinder": lambda: meshes.cylinder(),
    "torus": lambda: meshes.torus(),
}


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_meshes_positively_oriented(name):
    nodes, tets = GENERATORS[name]()
    assert np.all(meshes.tet_volumes(nodes, tets) > 0)
    surf = meshes.surface_nodes(tets)
    assert 0 < len(surf) <= len(nodes)


def test_cube5_volume():
    nodes, tets = meshes.cube5(2.0)
    assert np.isclose(meshes.tet_volumes(nodes, tets).sum(), 8.0)


def test_tet_roundtrip():
    nodes, tets = meshes.icosphere(0.3)
    n2, t2 = meshes.read_tet(meshes.write_tet(nodes, tets))
    assert np.array_equal(nodes, n2) and np.array_equal(tets, t2)


def test_tet_reader_errors():
    with pytest.raises(ValueError, match="line 2"):
        meshes.read_tet("v 0 0 0\nx 1 2\n")
    with pytest.raises(ValueError, match="missing node"):
        meshes.read_tet("v 0 0 0\nt 0 1 2 3\n")


def _ball(**kw):
    nodes, tets = meshes.icosphere(0.2)
    return SoftBody(nodes, tets, youngs=1e5, poisson=0.3, viscosity=2.0, **kw)


def _assemble(b, B):
    r = np.repeat(b.tet_dofs, 12, axis=1).ravel()
    c = np.tile(b.tet_dofs, (1, 12)).ravel()
    return sp.coo_matrix((B.ravel(), (r, c)), shape=(b.ndof, b.ndof)).toarray()


@given(st.integers(0, 2**31 - 1))
def test_elastic_force_is_negative_energy_gradient(seed):
    rng = np.random.default_rng(seed)
    b = _ball()
    x = b.rest_positions.ravel() + 0.01 * rng.normal(size=b.ndof)
    out = b.elastic_forces(x)
    g = central_fd(b.elastic_energy, x, 1e-7)
    assert np.allclose(-out["force"], g, atol=1e-5 * np.abs(g).max())
    K = _assemble(b, out["K"])
    Kfd = -central_fd(lambda z: b.elastic_forces(z, False)["force"], x, 1e-7)
    assert np.allclose(K, Kfd, atol=1e-5 * np.abs(K).max())
    assert np.allclose(K, K.T, atol=1e-8 * np.abs(K).max())


@given(st.integers(0, 2**31 - 1))
def test_viscous_jacobians(seed):
    rng = np.random.default_rng(seed)
    b = _ball()
    x = b.rest_positions.ravel() + 0.01 * rng.normal(size=b.ndof)
    v = rng.normal(size=b.ndof)
    out = b.viscous_forces(x, v)
    Kv = _assemble(b, out["Kv"])
    Kx = _assemble(b, out["Kx"])
    assert np.allclose(Kv, -central_fd(lambda z: b.viscous_forces(x, z, False)["force"], v, 1e-7),
                       atol=1e-6 * np.abs(Kv).max())
    assert np.allclose(Kx, -central_fd(lambda z: b.viscous_forces(z, v, False)["force"], x, 1e-7),
                       atol=1e-6 * np.abs(Kx).max())


@given(st.integers(0, 2**31 - 1))
def test_dissipation_nonnegative(seed):
    rng = np.random.default_rng(seed)
    b = _ball()
    x = b.rest_positions.ravel() + 0.02 * rng.normal(size=b.ndof)
    assert b.dissipation(x, rng.normal(size=b.ndof)) >= -1e-12


@given(arrays(np.float64, 3, elements=st.floats(-2, 2)), arrays(np.float64, 3, elements=st.floats(-5, 5)),
       arrays(np.float64, 3, elements=st.floats(-1, 1)))
def test_viscosity_vanishes_under_rigid_motion(theta, omega, vel):
    # rigidly rotated and translated configuration moving with a rigid velocity field
    b = _ball()
    xs = b.rest_positions @ rotation_matrix(theta).T + vel
    vs = xs @ skew(omega).T + vel
    f = b.viscous_forces(xs.ravel(), vs.ravel(), jacobians=False)["force"]
    assert np.abs(f).max() <= 1e-9 * (1 + np.abs(omega).max())


@given(arrays(np.float64, 3, elements=st.floats(-3, 3)))
def test_elastic_energy_rotation_invariant(theta):
    b = _ball()
    assert abs(b.elastic_energy((b.rest_positions @ rotation_matrix(theta).T).ravel())) < 1e-9


def test_lumped_mass_matches_volume():
    b = _ball(density=300.0)
    assert np.isclose(b.lumped_mass().sum() / 3, 300.0 * b.rest_volumes.sum())


def test_inverted_element_raises():
    b = _ball()
    x = b.rest_positions.copy()
    x[:, 2] *= -1.0
    with pytest.raises(InvertedElementError):
        b.elastic_forces(x.ravel())
