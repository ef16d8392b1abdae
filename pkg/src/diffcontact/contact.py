"""Obstacles, gap functions and penalty contact forces.

Forces are evaluated in batch over all contacts of a group.  For each
contact the force depends on the gap point ``y`` (which defines ``g`` and
``n``) and the velocity ``xdot`` of the material contact point; both
derivatives are returned so callers can chain them through their own
kinematics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

SEPARATED, SLIP, STICK, CONSTRAINED = 0, 1, 2, 3


class Regime(IntEnum):
    SEPARATED = SEPARATED
    SLIP = SLIP
    STICK = STICK
    CONSTRAINED = CONSTRAINED


VARIANTS = ("linear", "tanh", "hybrid")


@dataclass
class Obstacle:
    """Half-space or sphere obstacle.

    A half-space is ``{x : n . (x - point) >= 0}``.  A sphere obstacle keeps
    bodies outside it, or inside it when ``inside`` is set.
    """

    kind: str = "plane"
    point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    radius: float = 1.0
    inside: bool = False
    friction: float = 0.5
    name: str = "ground"

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float).reshape(3)
        self.normal = np.asarray(self.normal, dtype=float).reshape(3)
        if self.kind not in ("plane", "sphere"):
            raise ValueError(f"unknown obstacle kind {self.kind!r}")
        if self.kind == "plane":
            nn = np.linalg.norm(self.normal)
            if abs(nn - 1.0) > 1e-9:
                raise ValueError(f"obstacle {self.name!r}: normal must be unit length")
        elif self.radius <= 0:
            raise ValueError(f"obstacle {self.name!r}: radius must be positive")
        if self.friction < 0:
            raise ValueError(f"obstacle {self.name!r}: friction must be >= 0")

    def gap(self, x: np.ndarray):
        """Signed gap, outward normal and ``dn/dx`` for points ``x`` (m, 3)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = len(x)
        if self.kind == "plane":
            g = (x - self.point) @ self.normal
            n = np.broadcast_to(self.normal, (m, 3)).copy()
            return g, n, np.zeros((m, 3, 3))
        d = x - self.point
        L = np.linalg.norm(d, axis=1)
        L = np.maximum(L, 1e-12)
        n = d / L[:, None]
        dn = (np.eye(3)[None] - n[:, :, None] * n[:, None, :]) / L[:, None, None]
        if self.inside:
            return self.radius - L, -n, -dn
        return L - self.radius, n, dn


def gap(obstacle: Obstacle, x):
    """Single-point convenience wrapper returning ``(g, n)``."""
    g, n, _ = obstacle.gap(np.asarray(x, float).reshape(1, 3))
    return float(g[0]), n[0]


@dataclass
class ContactModel:
    variant: str = "linear"
    k_n: float = 1e3
    k_t: float | None = None
    eps_reg: float = 1e-8
    hybrid_mode: str = "residual"
    max_changes: int = 5
    damping_ramp: float = 1e-5  # penetration over which damping fades in

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown contact variant {self.variant!r}")
        if self.k_n <= 0 or (self.k_t is not None and self.k_t <= 0):
            raise ValueError("contact stiffness must be positive")
        if self.damping_ramp <= 0:
            raise ValueError("damping_ramp must be positive")
        if self.hybrid_mode not in ("residual", "active-set"):
            raise ValueError(f"unknown hybrid mode {self.hybrid_mode!r}")

    def tangential_stiffness(self, dt: float) -> float:
        return self.k_n * dt if self.k_t is None else self.k_t


def damping_ramp(g, width):
    """C1 smoothstep weight of the normal damper and its derivative in ``g``.

    The weight is 0 for ``g >= 0``, 1 for ``g <= -width`` and
    ``3 s^2 - 2 s^3`` with ``s = -g / width`` in between.
    """
    s = np.clip(-np.asarray(g, dtype=float) / width, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s), -6.0 * s * (1.0 - s) / width


def normal_force(g, n, k_n):
    """Penalty normal force ``n k_n max(-g, 0)``; zero at ``g = 0``."""
    n = np.asarray(n, float)
    return n * k_n * max(-float(g), 0.0)


def friction_linear(xdot, n, f_n, c_f, k_t, eps_reg=1e-8):
    """Clamped linear friction ``-t min(k_t |T xdot|, c_f f_n)``."""
    n = np.asarray(n, float)
    xdot = np.asarray(xdot, float)
    u = xdot - n * (n @ xdot)
    s = float(np.linalg.norm(u))
    if k_t * s <= c_f * f_n:
        return -k_t * u
    return -c_f * f_n * u / (s + eps_reg)


def friction_tanh(xdot, n, f_n, c_f, k_t):
    """Smooth friction ``-t c_f f_n tanh(k_t |T xdot| / (c_f f_n))``."""
    n = np.asarray(n, float)
    xdot = np.asarray(xdot, float)
    u = xdot - n * (n @ xdot)
    if c_f * f_n <= 0:
        return np.zeros(3)
    z = k_t * float(np.linalg.norm(u)) / (c_f * f_n)
    phi, _, _ = _tanh_ratio(np.array([z]))
    return -k_t * phi[0] * u


_PSI = np.array([-2 / 3, 8 / 15, -34 / 105, 496 / 2835, -13820 / 155925])


def _tanh_ratio(z: np.ndarray):
    """``phi = tanh(z)/z``, ``psi = phi'(z)/z`` and ``eta = z phi'(z)``."""
    z = np.asarray(z, float)
    small = z < 0.05
    zs = np.where(small, z, 1.0)
    zb = np.where(small, 1.0, z)
    z2 = zs * zs
    phi_s = 1 - z2 / 3 + 2 * z2**2 / 15 - 17 * z2**3 / 315 + 62 * z2**4 / 2835
    psi_s = _PSI[0] + z2 * (_PSI[1] + z2 * (_PSI[2] + z2 * (_PSI[3] + z2 * _PSI[4])))
    t = np.tanh(zb)
    phi_b = t / zb
    eta_b = (1.0 - t * t) - t / zb
    psi_b = eta_b / zb**2
    phi = np.where(small, phi_s, phi_b)
    psi = np.where(small, psi_s, psi_b)
    eta = np.where(small, z2 * psi_s, eta_b)
    return phi, psi, eta


@dataclass
class ContactBatch:
    """Forces and derivatives for a batch of contacts."""

    g: np.ndarray
    n: np.ndarray
    f: np.ndarray          # total world force (normal + damping + friction)
    df_dy: np.ndarray      # (m,3,3) w.r.t. gap point
    df_dv: np.ndarray      # (m,3,3) w.r.t. material point velocity
    df_dcf: np.ndarray     # (m,3)
    df_dkd: np.ndarray     # (m,3)
    fn: np.ndarray         # normal penalty magnitude
    ft: np.ndarray         # tangential force vector
    regime: np.ndarray


def evaluate_contacts(g, n, dn, xdot, c_f, k_d, model: ContactModel, k_t: float,
                      constrained: np.ndarray | None = None) -> ContactBatch:
    """Penalty contact forces for ``m`` contacts.

    Parameters
    ----------
    g, n, dn : arrays (m,), (m,3), (m,3,3)
        Gap, normal and normal derivative at the gap point.
    xdot : (m, 3)
        Velocity of the material contact point.
    c_f, k_d : arrays (m,)
        Friction coefficient and normal damping per contact.
    constrained : bool array (m,), optional
        Contacts whose tangential motion is handled by stick constraints;
        they receive no friction force.
    """
    m = len(g)
    eye = np.eye(3)
    c_f = np.broadcast_to(np.asarray(c_f, float), (m,))
    k_d = np.broadcast_to(np.asarray(k_d, float), (m,))
    active = g < 0.0
    # damping fades in smoothly over a small penetration so the force stays
    # continuous in g; a step jump at g = 0 can leave Newton without a root
    ramp, dramp = damping_ramp(g, model.damping_ramp)
    pen = np.where(active, -g, 0.0)
    fn = model.k_n * pen
    NN = n[:, :, None] * n[:, None, :]
    vn = np.einsum("mi,mi->m", n, xdot)
    dnv = np.einsum("mji,mj->mi", dn, xdot)  # d(n . xdot)/dy

    f = fn[:, None] * n
    df_dy = model.k_n * (-NN + pen[:, None, None] * dn) * active[:, None, None]
    df_dv = np.zeros((m, 3, 3))
    dfn_dy = -model.k_n * n * active[:, None]

    kd = k_d * ramp
    f -= (kd * vn)[:, None] * n
    df_dv -= kd[:, None, None] * NN
    df_dy -= kd[:, None, None] * (n[:, :, None] * dnv[:, None, :] + vn[:, None, None] * dn)
    df_dy -= (k_d * vn * dramp)[:, None, None] * NN  # dg/dy = n
    df_dkd = (-ramp * vn)[:, None] * n

    u = xdot - vn[:, None] * n
    T = eye[None] - NN
    du_dy = -(dn * vn[:, None, None] + n[:, :, None] * dnv[:, None, :])
    s = np.linalg.norm(u, axis=1)
    lim = c_f * fn
    fric = active.copy()
    if constrained is not None:
        fric &= ~constrained
    regime = np.where(active, SLIP, SEPARATED)
    ft = np.zeros((m, 3))
    dft_du = np.zeros((m, 3, 3))
    dft_dfn = np.zeros((m, 3))
    dft_dcf = np.zeros((m, 3))

    if model.variant == "tanh":
        ok = fric & (lim > 0)
        if np.any(ok):
            a = np.where(ok, k_t / np.where(ok, lim, 1.0), 0.0)
            z = a * s
            phi, psi, eta = _tanh_ratio(z)
            uu = u[:, :, None] * u[:, None, :]
            ft = np.where(ok[:, None], -k_t * phi[:, None] * u, 0.0)
            dft_du = np.where(ok[:, None, None],
                              -k_t * (phi[:, None, None] * eye + (a * a * psi)[:, None, None] * uu), 0.0)
            safe_fn = np.where(ok, fn, 1.0)
            safe_cf = np.where(ok, c_f, 1.0)
            dft_dfn = np.where(ok[:, None], (k_t * eta / safe_fn)[:, None] * u, 0.0)
            dft_dcf = np.where(ok[:, None], (k_t * eta / safe_cf)[:, None] * u, 0.0)
    else:
        stick = fric & (k_t * s <= lim)
        slip = fric & ~stick
        regime = np.where(stick, STICK, regime)
        ft = np.where(stick[:, None], -k_t * u, 0.0)
        dft_du = np.where(stick[:, None, None], -k_t * eye[None], 0.0)
        if np.any(slip):
            ss = np.where(slip, s, 1.0)
            phi = 1.0 / (ss + model.eps_reg)
            uh = u / ss[:, None]
            ft_s = -(lim * phi)[:, None] * u
            dft_du_s = -(lim)[:, None, None] * (
                phi[:, None, None] * eye - (phi * phi)[:, None, None] * u[:, :, None] * uh[:, None, :]
            )
            ft = np.where(slip[:, None], ft_s, ft)
            dft_du = np.where(slip[:, None, None], dft_du_s, dft_du)
            dft_dfn = np.where(slip[:, None], -(c_f * phi)[:, None] * u, dft_dfn)
            dft_dcf = np.where(slip[:, None], -(fn * phi)[:, None] * u, dft_dcf)
    if constrained is not None:
        regime = np.where(constrained & active, CONSTRAINED, regime)

    f = f + ft
    df_dv = df_dv + dft_du @ T
    df_dy = df_dy + dft_du @ du_dy + dft_dfn[:, :, None] * dfn_dy[:, None, :]
    return ContactBatch(g=g, n=n, f=f, df_dy=df_dy, df_dv=df_dv, df_dcf=dft_dcf,
                        df_dkd=df_dkd, fn=fn, ft=ft, regime=regime)


def tangent_basis(n: np.ndarray) -> np.ndarray:
    """Two orthonormal tangent rows ``(2, 3)`` for a unit normal."""
    n = np.asarray(n, float)
    k = int(np.argmin(np.abs(n)))
    e = np.zeros(3)
    e[k] = 1.0
    t1 = e - n * (n @ e)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2])


def penetration_at_rest(m: float, g: float, k_n: float) -> float:
    return m * abs(g) / k_n
