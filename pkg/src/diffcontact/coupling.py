"""Soft-constraint couplings between bodies.

Potential couplings use ``E = k/2 |c(y)|^2`` where ``y`` are world-space
features (points or body-fixed directions) of the coupled bodies.  Each
feature knows its Jacobian ``U = dy/dq`` and the derivative of ``U^T lam``
for fixed ``lam``; each constraint kind supplies ``c``, ``dc/dy`` and the
curvature ``sum_i c_i d2c_i/dy dy``.  The generic assembly then gives exact
forces and stiffness blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rotation import skew

DIST_EPS = 1e-12


# --------------------------------------------------------------------------- features
@dataclass
class Anchor:
    """Attachment of a coupling to a body.

    ``point`` is body-frame for rigid bodies, the rest-shape location for
    soft bodies (snapped to the nearest node), and ignored for point masses.
    ``body=None`` anchors to the world at ``point``.
    """

    body: str | None
    point: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float).reshape(3)


class PointFeature:
    def __init__(self, body_index: int | None, kind: str, local):
        self.body = body_index
        self.kind = kind  # "world" | "rigid" | "node" | "point"
        self.local = local

    def evaluate(self, view):
        if self.kind == "world":
            return self.local, np.zeros(0, dtype=np.int64), np.zeros((3, 0)), None
        off = view.offset(self.body)
        if self.kind in ("node", "point"):
            cols = off + 3 * self.local + np.arange(3)
            return view.q[cols], cols, np.eye(3), None
        kin = view.rigid(self.body)
        r = kin.R @ self.local
        Dr = kin.vector_jacobian(r)
        U = np.hstack([np.eye(3), Dr])
        cols = off + np.arange(6)

        def hess(lam):
            H = np.zeros((6, 6))
            H[3:, 3:] = kin.force_map_theta(r, Dr, lam)
            return H

        return kin.c + r, cols, U, hess


class DirectionFeature:
    def __init__(self, body_index: int | None, local):
        self.body = body_index
        self.local = np.asarray(local, float) / np.linalg.norm(local)

    def evaluate(self, view):
        if self.body is None:
            return self.local, np.zeros(0, dtype=np.int64), np.zeros((3, 0)), None
        kin = view.rigid(self.body)
        u = kin.R @ self.local
        Du = kin.vector_jacobian(u)
        U = np.hstack([np.zeros((3, 3)), Du])

        def hess(lam):
            H = np.zeros((6, 6))
            H[3:, 3:] = kin.force_map_theta(u, Du, lam)
            return H

        return u, view.offset(self.body) + np.arange(6), U, hess


# --------------------------------------------------------------------------- motor rotation
def axis_rotate(alpha: float, a: np.ndarray, v: np.ndarray):
    """Rodrigues rotation of ``v`` about unit-ish axis ``a`` by ``alpha``.

    Returns ``(g, dg_da, dg_dv, dg_dalpha, curv)`` where
    ``curv(lam) -> (H_aa, H_av, dGa_dalpha^T lam, dGv_dalpha^T lam)`` gives
    the second derivatives of ``lam . g``.
    """
    c, s = np.cos(alpha), np.sin(alpha)
    av = float(a @ v)
    axv = np.cross(a, v)
    g = c * v + s * axv + (1 - c) * a * av
    dg_dv = c * np.eye(3) + s * skew(a) + (1 - c) * np.outer(a, a)
    dg_da = -s * skew(v) + (1 - c) * (av * np.eye(3) + np.outer(a, v))
    dg_dalpha = -s * v + c * axv + s * a * av
    d_dv_dalpha = -s * np.eye(3) + c * skew(a) + s * np.outer(a, a)
    d_da_dalpha = -c * skew(v) + s * (av * np.eye(3) + np.outer(a, v))

    def curv(lam):
        la = float(lam @ a)
        H_aa = (1 - c) * (np.outer(lam, v) + np.outer(v, lam))
        H_av = -s * skew(lam) + (1 - c) * (np.outer(lam, a) + la * np.eye(3))
        return H_aa, H_av, d_da_dalpha.T @ lam, d_dv_dalpha.T @ lam

    return g, dg_da, dg_dv, dg_dalpha, curv


# --------------------------------------------------------------------------- couplings
@dataclass
class MotorSchedule:
    """Piecewise-linear target angle over steps.

    Knot ``k`` sits at step ``(k + 1) * every``; steps outside the knot range
    clamp to the end values.
    """

    knots: np.ndarray = field(default_factory=lambda: np.zeros(1))
    every: int = 1

    def __post_init__(self):
        self.knots = np.atleast_1d(np.asarray(self.knots, dtype=float))
        if self.every < 1:
            raise ValueError("schedule spacing must be >= 1")

    def stencil(self, step: int) -> tuple[np.ndarray, np.ndarray]:
        """Knot indices and weights with ``alpha = w @ knots[idx]``."""
        K = len(self.knots)
        s = step / self.every - 1.0
        if K == 1 or s <= 0:
            return np.array([0]), np.array([1.0])
        if s >= K - 1:
            return np.array([K - 1]), np.array([1.0])
        k0 = int(np.floor(s))
        t = s - k0
        return np.array([k0, k0 + 1]), np.array([1.0 - t, t])

    def value(self, step: int, knots: np.ndarray | None = None) -> float:
        idx, w = self.stencil(step)
        kn = self.knots if knots is None else knots
        return float(w @ kn[idx])


@dataclass
class DistanceSpring:
    a: Anchor
    b: Anchor
    rest_length: float = 0.0
    stiffness: float = 5e5
    unilateral: bool = False
    name: str = "spring"
    kind = "distance"


@dataclass
class BallSocket:
    a: Anchor
    b: Anchor
    stiffness: float = 5e5
    name: str = "ball"
    kind = "ball"


@dataclass
class Hinge:
    """Zero-length spring at the joint plus alignment of the body axes."""

    a: Anchor
    b: Anchor
    axis_a: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    axis_b: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    stiffness: float = 5e5
    name: str = "hinge"
    kind = "hinge"


@dataclass
class Motor:
    """Relative-angle motor ``c = w(b1) - R(alpha, w(a1)) w(b2)``."""

    body_a: str | None
    body_b: str | None
    axis_a: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    ref_a: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    ref_b: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    stiffness: float = 1e5
    schedule: MotorSchedule = field(default_factory=MotorSchedule)
    name: str = "motor"
    kind = "motor"

    def __post_init__(self):
        for attr in ("axis_a", "ref_a", "ref_b"):
            v = np.asarray(getattr(self, attr), dtype=float)
            setattr(self, attr, v / np.linalg.norm(v))
        if abs(self.axis_a @ self.ref_a) > 1e-9:
            raise ValueError(f"motor {self.name!r}: reference direction must be orthogonal to the axis")


@dataclass
class MotorDamping:
    """Damping torque ``k (omega_b - omega_a)`` on body a, opposite on b."""

    body_a: str | None
    body_b: str | None
    k_md: float = 1.0
    name: str = "motor_damping"
    kind = "motor_damping"


# --------------------------------------------------------------------------- constraint functions
def constraint_terms(coupling, ys, alpha=None):
    """Constraint value and derivatives for feature values ``ys``.

    Returns ``(c, C, S, c_alpha, C_alpha)``: ``C[j] = dc/dy_j``;
    ``S(cvec)`` gives a dict ``{(j, l): sum_i cvec_i d2c_i/dy_j dy_l}``;
    the alpha terms are ``None`` unless the constraint depends on a motor
    angle.  A flag in the last slot reports degenerate distance springs.
    """
    kind = coupling.kind
    if kind == "ball":
        return ys[0] - ys[1], [np.eye(3), -np.eye(3)], None, None, None
    if kind == "hinge":
        c = np.concatenate([ys[0] - ys[1], ys[3] - ys[2]])
        C = [np.zeros((6, 3)) for _ in range(4)]
        C[0][:3] = np.eye(3)
        C[1][:3] = -np.eye(3)
        C[2][3:] = -np.eye(3)
        C[3][3:] = np.eye(3)
        return c, C, None, None, None
    if kind == "distance":
        d = ys[0] - ys[1]
        L = max(float(np.linalg.norm(d)), DIST_EPS)
        cval = L - coupling.rest_length
        if coupling.unilateral and cval <= 0:
            return np.zeros(1), [np.zeros((1, 3)), np.zeros((1, 3))], None, None, None
        dh = d / L
        Hd = (np.eye(3) - np.outer(dh, dh)) / L

        def S(cv):
            B = cv[0] * Hd
            return {(0, 0): B, (0, 1): -B, (1, 0): -B, (1, 1): B}

        return np.array([cval]), [dh[None, :], -dh[None, :]], S, None, None
    if kind == "motor":
        # ys = (w(a1), w(b1), w(b2))
        a1, b1, b2 = ys
        g, dg_da, dg_dv, dg_dalpha, curv = axis_rotate(alpha, a1, b2)
        c = b1 - g

        def S(cv):
            H_aa, H_av, _, _ = curv(cv)
            return {(0, 0): -H_aa, (0, 2): -H_av, (2, 0): -H_av.T}

        def C_alpha(cv):
            _, _, ga, gv = curv(cv)
            return {0: -ga, 2: -gv}

        return c, [-dg_da, np.eye(3), -dg_dv], S, -dg_dalpha, C_alpha
    raise ValueError(f"unknown coupling kind {kind!r}")
