"""Rigid bodies in exponential coordinates.

Generalized coordinates of a rigid body are ``q = (c, theta)``: the world
position of the center of mass and the exponential rotation coordinates.
The kinetic energy is ``T = m/2 |c_dot|^2 + 1/2 omega^T I_w omega`` with
``omega = J(theta) theta_dot`` and ``I_w = R I_body R^T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rotation import rotation_and_jacobian, skew


@dataclass
class RigidBody:
    """A rigid body with point and sphere collision proxies.

    Attributes
    ----------
    mass : float
        Mass in kg.
    inertia : (3, 3) array
        Body-frame inertia tensor about the center of mass.
    position, rotation : (3,) arrays
        Initial pose (center of mass, exponential coordinates).
    velocity, spin : (3,) arrays
        Initial linear velocity and world angular velocity.
    proxy_points : (n, 3) array
        Body-frame contact points.
    proxy_spheres : list of (center, radius)
        Body-frame sphere proxies, tested against half-spaces only.
    damping : float
        Normal contact damping coefficient k_d.
    """

    mass: float
    inertia: np.ndarray
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    spin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    proxy_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    proxy_spheres: list = field(default_factory=list)
    damping: float = 0.0
    name: str = "rigid"

    ndof = 6

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        for attr in ("position", "rotation", "velocity", "spin"):
            setattr(self, attr, np.asarray(getattr(self, attr), dtype=float).reshape(3))
        self.proxy_points = np.asarray(self.proxy_points, dtype=float).reshape(-1, 3)
        self.proxy_spheres = [
            (np.asarray(c, dtype=float).reshape(3), float(r)) for c, r in self.proxy_spheres
        ]
        if self.mass <= 0:
            raise ValueError(f"rigid body {self.name!r}: mass must be positive")
        if not np.allclose(self.inertia, self.inertia.T, atol=1e-12):
            raise ValueError(f"rigid body {self.name!r}: inertia must be symmetric")
        if np.linalg.eigvalsh(self.inertia).min() <= 0:
            raise ValueError(f"rigid body {self.name!r}: inertia must be positive definite")
        if any(r < 0 for _, r in self.proxy_spheres):
            raise ValueError(f"rigid body {self.name!r}: proxy radius must be >= 0")

    def initial_state(self):
        """Initial ``(q, q_dot)`` with ``theta_dot = J^-1 omega``."""
        _, J = rotation_and_jacobian(self.rotation, order=0)
        q = np.concatenate([self.position, self.rotation])
        v = np.concatenate([self.velocity, np.linalg.solve(J, self.spin)])
        return q, v

    def initial_state_derivatives(self):
        """Derivatives of the initial velocity w.r.t. rotation and spin.

        Returns ``(dv_dtheta, dv_dspin)``, each 6x3, for ``v = (vel, J^-1 spin)``.
        """
        _, J, _, dJ = rotation_and_jacobian(self.rotation, order=1)
        Jinv = np.linalg.inv(J)
        td = Jinv @ self.spin
        dv_dtheta = np.zeros((6, 3))
        for k in range(3):
            dv_dtheta[3:, k] = -Jinv @ (dJ[k] @ td)
        dv_dspin = np.zeros((6, 3))
        dv_dspin[3:] = Jinv
        return dv_dtheta, dv_dspin


class RigidKinematics:
    """Per-state kinematic quantities shared by all force evaluations."""

    __slots__ = ("c", "theta", "v", "td", "R", "J", "dR", "dJ", "ddJ", "omega", "P", "Jdot")

    def __init__(self, q6: np.ndarray, v6: np.ndarray):
        self.c = q6[:3]
        self.theta = q6[3:]
        self.v = v6[:3]
        self.td = v6[3:]
        self.R, self.J, self.dR, self.dJ, self.ddJ = rotation_and_jacobian(self.theta, order=2)
        self.omega = self.J @ self.td
        # P[:, k] = d omega / d theta_k
        self.P = np.einsum("kab,b->ak", self.dJ, self.td)
        self.Jdot = np.einsum("k,kab->ab", self.td, self.dJ)

    def vector_jacobian(self, u: np.ndarray) -> np.ndarray:
        """d(R u_body)/dtheta for a world vector ``u = R u_body``."""
        return -skew(u) @ self.J

    def force_map_theta(self, lever: np.ndarray, dlever: np.ndarray, f: np.ndarray) -> np.ndarray:
        """d/dtheta of ``J^T (lever x f)`` with ``f`` held fixed."""
        m = np.cross(lever, f)
        out = np.einsum("kba,b->ak", self.dJ, m)
        out -= self.J.T @ (skew(f) @ dlever)
        return out

    def torque_map_theta(self, tau: np.ndarray) -> np.ndarray:
        """d/dtheta of ``J^T tau`` with ``tau`` held fixed."""
        return np.einsum("kba,b->ak", self.dJ, tau)


def generalized_mass(body: RigidBody, q6: np.ndarray) -> np.ndarray:
    R, J = rotation_and_jacobian(q6[3:], order=0)
    Iw = R @ body.inertia @ R.T
    M = np.zeros((6, 6))
    M[:3, :3] = body.mass * np.eye(3)
    M[3:, 3:] = J.T @ Iw @ J
    return M


def fictitious_force(body: RigidBody, q6: np.ndarray, v6: np.ndarray) -> np.ndarray:
    """Coriolis/centrifugal generalized force ``C(q, q_dot)``."""
    kin = RigidKinematics(q6, v6)
    Iw = kin.R @ body.inertia @ kin.R.T
    w = kin.omega
    h = Iw @ (kin.Jdot @ kin.td) + np.cross(w, Iw @ w)
    return np.concatenate([np.zeros(3), kin.J.T @ h])


def generalized_mass_and_fictitious(body: RigidBody, q6, v6):
    """Mass block, fictitious force and the inertial residual derivatives.

    Returns
    -------
    M : (6, 6) array
    C : (6,) array
    blocks : dict
        ``dC_dq`` and ``dC_dv`` (6x6 each) from :func:`inertial_residual`
        evaluated at zero acceleration.
    """
    q6 = np.asarray(q6, dtype=float)
    v6 = np.asarray(v6, dtype=float)
    M = generalized_mass(body, q6)
    r, dq, dv, _ = inertial_residual(body, q6, v6, np.zeros(6))
    return M, r, {"dC_dq": dq, "dC_dv": dv}


def inertial_residual(body: RigidBody, q6, v6, a6, kin: RigidKinematics | None = None):
    """Inertial part ``M(q) a + C(q, v)`` and its derivatives.

    Returns ``(r, dr_dq, dr_dv, dr_da)``.
    """
    if kin is None:
        kin = RigidKinematics(q6, v6)
    m = body.mass
    R, J, dJ, ddJ = kin.R, kin.J, kin.dJ, kin.ddJ
    td, tdd = kin.td, a6[3:]
    Iw = R @ body.inertia @ R.T
    w = kin.omega
    wdot = J @ tdd + kin.Jdot @ td
    Iww = Iw @ w
    h = Iw @ wdot + np.cross(w, Iww)

    r = np.empty(6)
    r[:3] = m * a6[:3]
    r[3:] = J.T @ h

    dr_da = np.zeros((6, 6))
    dr_da[:3, :3] = m * np.eye(3)
    dr_da[3:, 3:] = J.T @ Iw @ J

    # d/d theta_dot
    Pm = kin.P
    dwdot_dtd = kin.Jdot + Pm
    gyro = skew(w) @ Iw - skew(Iww)  # d(w x Iw w)/dw
    dh_dtd = Iw @ dwdot_dtd + gyro @ J
    dr_dv = np.zeros((6, 6))
    dr_dv[3:, 3:] = J.T @ dh_dtd

    # d/d theta
    C = J  # columns c_k = J e_k
    dr_dq = np.zeros((6, 6))
    ddJ_td = np.einsum("klab,b->kla", ddJ, td)  # (k, l, a)
    for k in range(3):
        ck = skew(C[:, k])
        dIw = ck @ Iw - Iw @ ck
        dwdot = dJ[k] @ tdd + np.einsum("l,la->a", td, ddJ_td[k])
        dw = Pm[:, k]
        dh = dIw @ wdot + Iw @ dwdot + np.cross(dw, Iww) + np.cross(w, dIw @ w + Iw @ dw)
        dr_dq[3:, 3 + k] = dJ[k].T @ h + J.T @ dh
    return r, dr_dq, dr_dv, dr_da


def map_world_force(body_q6, f, tau=None, x_body=None):
    """Generalized force of a world force ``f`` at body point ``x_body``.

    Returns ``(Q, dQ_dq)`` with ``Q = (f, J^T (r x f + tau))`` and
    ``r = R x_body``.  ``dQ_dq`` holds ``f``/``tau`` fixed.
    """
    q6 = np.asarray(body_q6, dtype=float)
    f = np.asarray(f, dtype=float)
    tau = np.zeros(3) if tau is None else np.asarray(tau, dtype=float)
    xb = np.zeros(3) if x_body is None else np.asarray(x_body, dtype=float)
    kin = RigidKinematics(q6, np.zeros(6))
    r = kin.R @ xb
    Q = np.concatenate([f, kin.J.T @ (np.cross(r, f) + tau)])
    dQ = np.zeros((6, 6))
    dQ[3:, 3:] = kin.force_map_theta(r, kin.vector_jacobian(r), f) + kin.torque_map_theta(tau)
    return Q, dQ


def contact_point_kinematics(q6, v6, x_body):
    """World position and velocity of a body-fixed point with derivatives.

    Returns ``(x, xdot, dx_dq, dxdot_dq, dxdot_dv)``; ``dx_dq`` and
    ``dxdot_dv`` coincide.
    """
    kin = RigidKinematics(np.asarray(q6, float), np.asarray(v6, float))
    r = kin.R @ np.asarray(x_body, float)
    W = np.zeros((3, 6))
    W[:, :3] = np.eye(3)
    Dr = kin.vector_jacobian(r)
    W[:, 3:] = Dr
    x = kin.c + r
    xdot = kin.v + np.cross(kin.omega, r)
    dxdot = np.zeros((3, 6))
    dxdot[:, 3:] = -skew(r) @ kin.P + skew(kin.omega) @ Dr
    return x, xdot, W, dxdot, W.copy()


def kinetic_energy(body: RigidBody, q6, v6) -> float:
    M = generalized_mass(body, q6)
    return 0.5 * float(v6 @ M @ v6)


def angular_momentum(body: RigidBody, q6, v6) -> np.ndarray:
    """World angular momentum about the origin."""
    R, J = rotation_and_jacobian(q6[3:], order=0)
    w = J @ v6[3:]
    return R @ body.inertia @ R.T @ w + body.mass * np.cross(q6[:3], v6[:3])


def contact_damping_force(x, xdot, g, n, k_d, damping_ramp: float = 1e-5):
    """Normal damping ``-w k_d (n . xdot) n`` with the smoothstep weight ``w`` of the contact model."""
    n = np.asarray(n, dtype=float)
    s = min(1.0, max(0.0, -g / damping_ramp))
    w = s * s * (3.0 - 2.0 * s)
    return -w * k_d * float(n @ np.asarray(xdot, dtype=float)) * n


def restitution_ratio(k_n: float, k_d: float, m: float) -> float:
    """Analytic rebound ratio of the damped penalty oscillator."""
    if k_n <= 0 or m <= 0 or k_d < 0:
        raise ValueError("require k_n > 0, m > 0, k_d >= 0")
    disc = 4.0 * k_n * m - k_d**2
    if disc <= 0:
        raise ValueError("overdamped contact (k_d^2 >= 4 k_n m): no rebound")
    return float(np.exp(-np.pi * k_d / np.sqrt(disc)))


def simulate_rebound(k_n: float, k_d: float, m: float = 1.0, v_in: float = 1.0,
                     dt: float = 1e-5, max_steps: int = 10_000_000,
                     damping_ramp: float = 1e-5) -> float:
    """Measured ``v_out / v_in`` of a 1-D point mass hitting a penalty wall.

    The mass starts at the wall surface moving inward with speed ``v_in`` and
    is integrated with implicit Euler until it leaves the contact.  Each step
    is a scalar Newton solve of the piecewise residual; damping fades in over
    ``damping_ramp`` of penetration, as in the contact model.
    """
    x, v = 0.0, -v_in
    for _ in range(max_steps):
        # residual m (x' - x - dt v)/dt^2 - f(x', (x'-x)/dt); f = -k_n x - k_d xdot inside
        xn = x + dt * v
        for _ in range(50):
            vn = (xn - x) / dt
            if xn < 0.0:
                s = min(1.0, -xn / damping_ramp)
                w, dw = s * s * (3.0 - 2.0 * s), -6.0 * s * (1.0 - s) / damping_ramp
                f = -k_n * xn - k_d * w * vn
                df = -k_n - k_d * (w / dt + dw * vn)
            else:
                f, df = 0.0, 0.0
            r = m * (vn - v) / dt - f
            dr = m / dt**2 - df
            step = r / dr
            xn -= step
            if abs(step) < 1e-15 * (1.0 + abs(xn)):
                break
        vn = (xn - x) / dt
        if x < 0.0 <= xn and vn > 0.0:
            return vn / v_in
        x, v = xn, vn
    raise RuntimeError("mass did not leave the contact")
