"""Tetrahedral FEM soft bodies.

Elasticity uses the compressible Neo-Hookean energy

    Psi(F) = mu/2 (tr(F^T F) - 3) - mu ln J + lam/2 (ln J)^2

and viscosity the Green strain rate ``D = (F^T Fdot + Fdot^T F)/2`` with
stress ``sigma = nu F D``, which vanishes for rigid motions.
All per-tet quantities are evaluated in batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .meshes import surface_nodes, tet_volumes


class InvertedElementError(ValueError):
    """Raised when a tet has non-positive volume ratio ``J``."""

    def __init__(self, body: str, tet: int, J: float):
        super().__init__(f"soft body {body!r}: tet {tet} inverted (J={J:.3e})")
        self.body = body
        self.tet = tet
        self.J = J


def lame_from_youngs(E: float, poisson: float) -> tuple[float, float]:
    mu = E / (2.0 * (1.0 + poisson))
    lam = E * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
    return mu, lam


@dataclass
class SoftBody:
    """Deformable body discretized with linear tets.

    Material is given as Young's modulus and Poisson ratio; ``mu`` and
    ``lam`` are derived.  Initial conditions are a rigid placement of the
    rest shape plus a uniform velocity and spin.
    """

    rest_positions: np.ndarray
    tets: np.ndarray
    youngs: float = 1e4
    poisson: float = 0.3
    viscosity: float = 0.0
    density: float = 1000.0
    name: str = "soft"
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    spin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    contact_nodes: np.ndarray | None = None

    def __post_init__(self):
        self.rest_positions = np.asarray(self.rest_positions, dtype=float).reshape(-1, 3)
        self.tets = np.asarray(self.tets, dtype=np.int64).reshape(-1, 4)
        for attr in ("position", "velocity", "spin"):
            setattr(self, attr, np.asarray(getattr(self, attr), dtype=float).reshape(3))
        vol = tet_volumes(self.rest_positions, self.tets)
        if np.any(vol <= 0):
            bad = int(np.argmin(vol))
            raise ValueError(f"soft body {self.name!r}: tet {bad} has non-positive rest volume")
        if self.youngs <= 0 or not (0 <= self.poisson < 0.5):
            raise ValueError(f"soft body {self.name!r}: invalid elastic constants")
        if self.viscosity < 0 or self.density <= 0:
            raise ValueError(f"soft body {self.name!r}: invalid viscosity or density")
        self.rest_volumes = vol
        X = self.rest_positions[self.tets]
        Dm = (X[:, 1:] - X[:, :1]).transpose(0, 2, 1)  # columns are edges
        self.Dm_inv = np.linalg.inv(Dm)
        # gradient operator: F = sum_a x_a (x) grad[a]
        self.grad = np.concatenate([-self.Dm_inv.sum(axis=1, keepdims=True), self.Dm_inv], axis=1)
        if self.contact_nodes is None:
            self.contact_nodes = surface_nodes(self.tets)
        self.contact_nodes = np.asarray(self.contact_nodes, dtype=np.int64)
        n = len(self.rest_positions)
        self.ndof = 3 * n
        dofs = 3 * self.tets[:, :, None] + np.arange(3)[None, None, :]
        self.tet_dofs = dofs.reshape(-1, 12)
        self._com_rest = self.node_masses_unit() @ self.rest_positions / self.node_masses_unit().sum()

    @property
    def mu(self) -> float:
        return lame_from_youngs(self.youngs, self.poisson)[0]

    @property
    def lam(self) -> float:
        return lame_from_youngs(self.youngs, self.poisson)[1]

    def node_masses_unit(self) -> np.ndarray:
        m = np.zeros(len(self.rest_positions))
        np.add.at(m, self.tets.ravel(), np.repeat(self.rest_volumes / 4.0, 4))
        return m

    def lumped_mass(self) -> np.ndarray:
        """Per-DOF diagonal of the lumped mass matrix."""
        return np.repeat(self.density * self.node_masses_unit(), 3)

    def initial_state(self):
        """Rest shape centered on ``position`` with rigid velocity field."""
        rel = self.rest_positions - self._com_rest
        x = rel + self.position
        v = self.velocity + np.cross(self.spin, rel)
        return x.ravel(), v.ravel()

    def initial_state_derivatives(self):
        """``(dq/dposition, dv/dvelocity, dv/dspin)`` as (ndof, 3) arrays."""
        rel = self.rest_positions - self._com_rest
        n = len(rel)
        eye = np.tile(np.eye(3), (n, 1))
        from .rotation import skew
        dspin = -skew(rel).reshape(-1, 3)
        return eye, eye.copy(), dspin

    # ------------------------------------------------------------------ kinematics
    def deformation_gradients(self, x: np.ndarray, v: np.ndarray | None = None):
        """Per-tet ``F`` and ``Fdot`` (``Fdot`` is None when ``v`` is None)."""
        xe = np.asarray(x, float).reshape(-1, 3)[self.tets]
        F = np.einsum("tai,taj->tij", xe, self.grad)
        if v is None:
            return F, None
        ve = np.asarray(v, float).reshape(-1, 3)[self.tets]
        return F, np.einsum("tai,taj->tij", ve, self.grad)

    def _check(self, F):
        J = np.linalg.det(F)
        if np.any(~np.isfinite(J)) or np.any(J <= 0):
            bad = int(np.argmin(np.where(np.isfinite(J), J, -np.inf)))
            raise InvertedElementError(self.name, bad, float(J[bad]))
        return J

    # ------------------------------------------------------------------ elasticity
    def elastic_energy(self, x: np.ndarray) -> float:
        F, _ = self.deformation_gradients(x)
        J = self._check(F)
        lnJ = np.log(J)
        mu, lam = self.mu, self.lam
        psi = 0.5 * mu * (np.einsum("tij,tij->t", F, F) - 3.0) - mu * lnJ + 0.5 * lam * lnJ**2
        return float(self.rest_volumes @ psi)

    def elastic_forces(self, x: np.ndarray, stiffness: bool = True, param_grads: bool = False):
        """Energy, nodal forces and per-tet stiffness blocks.

        Returns
        -------
        dict
            ``energy``; ``force`` (ndof,); ``K`` (T, 12, 12) blocks of the
            energy Hessian when ``stiffness``; ``force_mu``, ``force_lam``
            (forces per unit Lame parameter) when ``param_grads``.
        """
        F, _ = self.deformation_gradients(x)
        J = self._check(F)
        lnJ = np.log(J)
        Finv = np.linalg.inv(F)
        FinvT = Finv.transpose(0, 2, 1)
        mu, lam = self.mu, self.lam
        P_mu = F - FinvT
        P_lam = lnJ[:, None, None] * FinvT
        P = mu * P_mu + lam * P_lam
        psi = 0.5 * mu * (np.einsum("tij,tij->t", F, F) - 3.0) - mu * lnJ + 0.5 * lam * lnJ**2
        out = {"energy": float(self.rest_volumes @ psi)}
        out["force"] = -self._scatter(P)
        if param_grads:
            out["force_mu"] = -self._scatter(P_mu)
            out["force_lam"] = -self._scatter(P_lam)
        if stiffness:
            # A[t,i,j,a,b] = dP_ij / dF_ab
            eye = np.eye(3)
            A = mu * np.einsum("ia,jb->ijab", eye, eye)[None].repeat(len(F), 0)
            A = A + (mu - lam * lnJ)[:, None, None, None, None] * np.einsum("tbi,tja->tijab", Finv, Finv)
            A = A + lam * np.einsum("tji,tba->tijab", Finv, Finv)
            out["K"] = self._blocks(A)
        return out

    def _scatter(self, P):
        """Nodal gradient ``sum_t V_t P_t : dF/dx`` as an (ndof,) vector."""
        g = np.einsum("t,tij,taj->tai", self.rest_volumes, P, self.grad)
        out = np.zeros(self.ndof)
        np.add.at(out, self.tet_dofs.ravel(), g.ravel())
        return out

    def _blocks(self, A):
        K = np.einsum("t,taj,tijkb,tcb->taick", self.rest_volumes, self.grad, A, self.grad)
        return K.reshape(-1, 12, 12)

    # ------------------------------------------------------------------ viscosity
    def viscous_forces(self, x: np.ndarray, v: np.ndarray, jacobians: bool = True):
        """Viscous nodal forces with ``dforce/dv`` and ``dforce/dx`` blocks.

        Returns a dict with ``force`` (ndof,), ``force_nu`` (force per unit
        viscosity) and, when ``jacobians``, ``Kv`` and ``Kx`` as (T,12,12)
        blocks of the negative force derivatives.
        """
        F, Fd = self.deformation_gradients(x, v)
        D = 0.5 * (np.einsum("tki,tkj->tij", F, Fd) + np.einsum("tki,tkj->tij", Fd, F))
        s_unit = np.einsum("tik,tkj->tij", F, D)
        nu = self.viscosity
        out = {"force_nu": -self._scatter(s_unit)}
        out["force"] = nu * out["force_nu"]
        if jacobians:
            eye = np.eye(3)
            FFt = np.einsum("tik,tak->tia", F, F)
            # d sigma_ij / d Fdot_ab = nu/2 ((F F^T)_ia d_bj + F_ib F_aj)
            Av = 0.5 * nu * (
                np.einsum("tia,bj->tijab", FFt, eye) + np.einsum("tib,taj->tijab", F, F)
            )
            FFdt = np.einsum("tik,tak->tia", F, Fd)
            # d sigma_ij / d F_ab = nu (d_ia D_bj + (F_ib Fd_aj + (F Fd^T)_ia d_bj)/2)
            Ax = nu * (
                np.einsum("ia,tbj->tijab", eye, D)
                + 0.5 * np.einsum("tib,taj->tijab", F, Fd)
                + 0.5 * np.einsum("tia,bj->tijab", FFdt, eye)
            )
            out["Kv"] = self._blocks(Av)
            out["Kx"] = self._blocks(Ax)
        return out

    def dissipation(self, x: np.ndarray, v: np.ndarray) -> float:
        """Power ``-f . v`` of the viscous forces (always >= 0)."""
        return float(-self.viscous_forces(x, v, jacobians=False)["force"] @ np.asarray(v).ravel())

    def momentum(self, x: np.ndarray, v: np.ndarray):
        """Linear and angular momentum (about the origin)."""
        m = self.density * self.node_masses_unit()
        xs = np.asarray(x).reshape(-1, 3)
        vs = np.asarray(v).reshape(-1, 3)
        return (m[:, None] * vs).sum(0), (m[:, None] * np.cross(xs, vs)).sum(0)
