"""Assembled multi-body system: DOF layout, parameters and the residual.

The residual of one time step is ``r(q, v, a, p) = M(q) a + C(q, v) - f(q, v, p)``
evaluated at end-of-step positions ``q``, velocities ``v`` and accelerations
``a``.  Partial derivatives w.r.t. each of the three are returned separately;
the integrator combines them with its discretization coefficients.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import contact as ct
from .contact import ContactModel
from .coupling import (
    BallSocket, DirectionFeature, DistanceSpring, Hinge, Motor, MotorDamping,
    PointFeature, constraint_terms,
)
from .rigid import RigidBody, RigidKinematics, inertial_residual
from .rotation import rotation_and_jacobian, skew
from .soft import SoftBody

log = logging.getLogger(__name__)


class AssemblyError(FloatingPointError):
    """Non-finite value produced by one of the force modules."""

    def __init__(self, module: str):
        super().__init__(f"non-finite residual contribution from {module}")
        self.module = module


@dataclass
class PointMass:
    """3-DOF point mass, e.g. the nodes of a mass-spring sheet."""

    mass: float
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    damping: float = 0.0
    name: str = "point"
    ndof = 3

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError(f"point mass {self.name!r}: mass must be positive")
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)

    def initial_state(self):
        return self.position.copy(), self.velocity.copy()


# --------------------------------------------------------------------------- parameters
PARAM_KINDS = {
    "youngs": "soft",
    "viscosity": "soft",
    "density": "soft",
    "friction": "obstacle",
    "damping": "rigid",
    "gravity": None,
    "motor": "coupling",
    "init_position": "body",
    "init_velocity": "body",
    "init_rotation": "rigid",
    "init_spin": "body",
}
INIT_KINDS = ("init_position", "init_velocity", "init_rotation", "init_spin")


@dataclass
class ParamSpec:
    """One entry of the parameter vector.

    ``target`` names a body, obstacle or coupling; ``index`` selects an axis
    (vector-valued kinds) or a knot (motor schedules).
    """

    kind: str
    target: str | None = None
    index: int = 0
    lower: float = -np.inf
    upper: float = np.inf
    log: bool = False
    name: str | None = None

    def __post_init__(self):
        if self.kind not in PARAM_KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if self.name is None:
            tgt = f"{self.target}." if self.target else ""
            self.name = f"{tgt}{self.kind}[{self.index}]"


class StateView:
    """Lazily evaluated per-body kinematics for one ``(q, v)`` pair."""

    def __init__(self, system: "MultiBodySystem", q, v):
        self.system = system
        self.q = q
        self.v = v
        self._kin: dict[int, RigidKinematics] = {}

    def offset(self, b: int) -> int:
        return self.system.offsets[b]

    def rigid(self, b: int) -> RigidKinematics:
        kin = self._kin.get(b)
        if kin is None:
            o = self.system.offsets[b]
            kin = RigidKinematics(self.q[o:o + 6], self.v[o:o + 6])
            self._kin[b] = kin
        return kin


class _Assembly:
    def __init__(self, n: int, npar: int, jac: bool, params: bool):
        self.n = n
        self.r = np.zeros(n)
        self.jac = jac
        self.trip = {"q": ([], [], []), "v": ([], [], []), "a": ([], [], [])}
        self.A = np.zeros((n, npar)) if params else None

    def block(self, which, rows, cols, B):
        if B.size == 0:
            return
        R, C = self.trip[which][0], self.trip[which][1]
        R.append(np.repeat(rows, len(cols)))
        C.append(np.tile(cols, len(rows)))
        self.trip[which][2].append(np.asarray(B, float).ravel())

    def blocks(self, which, rows, cols, vals):
        self.trip[which][0].append(rows)
        self.trip[which][1].append(cols)
        self.trip[which][2].append(vals)

    def diag(self, which, idx, vals):
        self.blocks(which, idx, idx, vals)

    def check(self, module: str):
        if not np.all(np.isfinite(self.r)):
            raise AssemblyError(module)


@dataclass
class Evaluation:
    """Residual and its partial derivatives at one state."""

    r: np.ndarray
    triplets: dict
    A: np.ndarray | None
    contacts: dict
    n: int

    def matrix(self, which: str) -> sp.csc_matrix:
        rows, cols, vals = self.triplets[which]
        if not rows:
            return sp.csc_matrix((self.n, self.n))
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.n, self.n)
        ).tocsc()

    def combined(self, cq: float, cv: float, ca: float) -> sp.csc_matrix:
        rows, cols, vals = [], [], []
        for key, c in (("q", cq), ("v", cv), ("a", ca)):
            R, C, V = self.triplets[key]
            if c == 0 or not R:
                continue
            rows += R
            cols += C
            vals += [c * x for x in V]
        if not rows:
            return sp.csc_matrix((self.n, self.n))
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.n, self.n)
        ).tocsc()


class MultiBodySystem:
    """Bodies, obstacles, couplings and the contact model of a scene.

    Parameters
    ----------
    bodies : list
        :class:`SoftBody`, :class:`RigidBody` or :class:`PointMass` objects
        with unique names.
    obstacles : list of Obstacle
    couplings : list
        Coupling objects from :mod:`diffcontact.coupling`.
    gravity : (3,) array
    contact : ContactModel
    parameters : list of ParamSpec
        Layout of the parameter vector ``p``.
    """

    def __init__(self, bodies=(), obstacles=(), couplings=(), gravity=(0.0, 0.0, -9.81),
                 contact: ContactModel | None = None, parameters=()):
        self.bodies = list(bodies)
        self.obstacles = list(obstacles)
        self.couplings = list(couplings)
        self.gravity = np.asarray(gravity, dtype=float).reshape(3)
        self.contact = contact if contact is not None else ContactModel()
        self.parameters = list(parameters)
        self.finalized = False
        self.k_t = None

    # ------------------------------------------------------------------ setup
    def finalize(self, dt: float | None = None):
        names = [b.name for b in self.bodies]
        if len(set(names)) != len(names):
            raise ValueError("body names must be unique")
        self.body_index = {b.name: i for i, b in enumerate(self.bodies)}
        self.obstacle_index = {o.name: i for i, o in enumerate(self.obstacles)}
        self.coupling_index = {c.name: i for i, c in enumerate(self.couplings)}
        self.offsets = []
        n = 0
        for b in self.bodies:
            self.offsets.append(n)
            n += b.ndof
        self.ndof = n
        if dt is not None:
            self.k_t = self.contact.tangential_stiffness(dt)
        elif self.k_t is None:
            self.k_t = self.contact.tangential_stiffness(1.0 / 60.0)
        self._build_contacts()
        self._build_couplings()
        self._build_parameters()
        self._mass_diag = self._lumped_mass()
        self.finalized = True
        return self

    def _lumped_mass(self):
        m = np.zeros(self.ndof)
        for b, o in zip(self.bodies, self.offsets):
            if isinstance(b, SoftBody):
                m[o:o + b.ndof] = b.lumped_mass()
            elif isinstance(b, PointMass):
                m[o:o + 3] = b.mass
            else:
                m[o:o + 3] = b.mass
        return m

    def _build_contacts(self):
        table = []
        bases, kds, owners = [], [], []
        for bi, (b, o) in enumerate(zip(self.bodies, self.offsets)):
            if isinstance(b, SoftBody):
                for node in b.contact_nodes:
                    bases.append(o + 3 * int(node))
                    kds.append(0.0)
                    owners.append((bi, int(node)))
            elif isinstance(b, PointMass):
                bases.append(o)
                kds.append(b.damping)
                owners.append((bi, 0))
        self._pt_base = np.array(bases, dtype=np.int64)
        self._pt_kd = np.array(kds, dtype=float)
        self._pt_first = []
        for oi, obs in enumerate(self.obstacles):
            self._pt_first.append(len(table))
            for (bi, node), base in zip(owners, bases):
                kind = "node" if isinstance(self.bodies[bi], SoftBody) else "point"
                table.append(dict(kind=kind, body=bi, local=node, obstacle=oi,
                                  feature=PointFeature(bi, kind, node if kind == "node" else 0)))
        self._rigid_groups = []
        for bi, b in enumerate(self.bodies):
            if not isinstance(b, RigidBody):
                continue
            for oi, obs in enumerate(self.obstacles):
                first = len(table)
                for k, xb in enumerate(b.proxy_points):
                    table.append(dict(kind="rigid_point", body=bi, local=k, obstacle=oi,
                                      feature=PointFeature(bi, "rigid", xb)))
                for k, (cb, rad) in enumerate(b.proxy_spheres):
                    if obs.kind != "plane":
                        raise ValueError(
                            f"sphere proxy of {b.name!r} against sphere obstacle {obs.name!r} is not supported"
                        )
                    table.append(dict(kind="rigid_sphere", body=bi, local=k, obstacle=oi, feature=None))
                count = len(table) - first
                if count:
                    self._rigid_groups.append((bi, oi, first, count))
        self.contact_table = table
        self.n_contacts = len(table)

    def _feature_point(self, anchor):
        if anchor.body is None:
            return PointFeature(None, "world", anchor.point)
        bi = self._resolve_body(anchor.body)
        b = self.bodies[bi]
        if isinstance(b, RigidBody):
            return PointFeature(bi, "rigid", anchor.point)
        if isinstance(b, PointMass):
            return PointFeature(bi, "point", 0)
        node = int(np.argmin(np.linalg.norm(b.rest_positions - anchor.point, axis=1)))
        return PointFeature(bi, "node", node)

    def _feature_dir(self, body, axis):
        if body is None:
            return DirectionFeature(None, axis)
        bi = self._resolve_body(body)
        if not isinstance(self.bodies[bi], RigidBody):
            raise ValueError(f"axis features need a rigid body, got {body!r}")
        return DirectionFeature(bi, axis)

    def _resolve_body(self, name):
        if name not in self.body_index:
            raise ValueError(f"unknown body {name!r}")
        return self.body_index[name]

    def _build_couplings(self):
        self._coupling_features = []
        for c in self.couplings:
            if isinstance(c, (BallSocket, DistanceSpring)):
                feats = [self._feature_point(c.a), self._feature_point(c.b)]
            elif isinstance(c, Hinge):
                feats = [self._feature_point(c.a), self._feature_point(c.b),
                         self._feature_dir(c.a.body, c.axis_a), self._feature_dir(c.b.body, c.axis_b)]
            elif isinstance(c, Motor):
                feats = [self._feature_dir(c.body_a, c.axis_a), self._feature_dir(c.body_a, c.ref_a),
                         self._feature_dir(c.body_b, c.ref_b)]
            elif isinstance(c, MotorDamping):
                feats = [None if c.body_a is None else self._resolve_body(c.body_a),
                         None if c.body_b is None else self._resolve_body(c.body_b)]
                for bi in feats:
                    if bi is not None and not isinstance(self.bodies[bi], RigidBody):
                        raise ValueError("motor damping needs rigid bodies")
            else:
                raise ValueError(f"unknown coupling {c!r}")
            if getattr(c, "stiffness", 1.0) <= 0:
                raise ValueError(f"coupling {c.name!r}: stiffness must be positive")
            self._coupling_features.append(feats)

    def _build_parameters(self):
        self._param_targets = []
        for spec in self.parameters:
            role = PARAM_KINDS[spec.kind]
            if role in ("soft", "rigid", "body"):
                ti = self._resolve_body(spec.target)
                b = self.bodies[ti]
                if role == "soft" and not isinstance(b, SoftBody):
                    raise ValueError(f"parameter {spec.name}: {spec.target!r} is not a soft body")
                if role == "rigid" and not isinstance(b, RigidBody):
                    raise ValueError(f"parameter {spec.name}: {spec.target!r} is not a rigid body")
            elif role == "obstacle":
                if spec.target not in self.obstacle_index:
                    raise ValueError(f"parameter {spec.name}: unknown obstacle {spec.target!r}")
                ti = self.obstacle_index[spec.target]
            elif role == "coupling":
                if spec.target not in self.coupling_index:
                    raise ValueError(f"parameter {spec.name}: unknown coupling {spec.target!r}")
                ti = self.coupling_index[spec.target]
                if not isinstance(self.couplings[ti], Motor):
                    raise ValueError(f"parameter {spec.name}: {spec.target!r} is not a motor")
            else:
                ti = None
            self._param_targets.append(ti)
        self._motor_params: dict[int, dict[int, int]] = {}
        for j, (spec, ti) in enumerate(zip(self.parameters, self._param_targets)):
            if spec.kind == "motor":
                self._motor_params.setdefault(ti, {})[spec.index] = j

    # ------------------------------------------------------------------ parameters
    @property
    def n_params(self) -> int:
        return len(self.parameters)

    @property
    def param_names(self) -> list[str]:
        return [s.name for s in self.parameters]

    def _param_slot(self, spec, ti):
        """(object, attribute, index or None) holding the value of ``spec``."""
        k = spec.kind
        if k in ("youngs", "viscosity", "density"):
            return self.bodies[ti], k, None
        if k == "friction":
            return self.obstacles[ti], "friction", None
        if k == "damping":
            return self.bodies[ti], "damping", None
        if k == "gravity":
            return self, "gravity", spec.index
        if k == "motor":
            return self.couplings[ti].schedule, "knots", spec.index
        attr = {"init_position": "position", "init_velocity": "velocity",
                "init_rotation": "rotation", "init_spin": "spin"}[k]
        return self.bodies[ti], attr, spec.index

    def get_parameters(self) -> np.ndarray:
        self._require()
        out = np.empty(self.n_params)
        for j, (spec, ti) in enumerate(zip(self.parameters, self._param_targets)):
            obj, attr, idx = self._param_slot(spec, ti)
            val = getattr(obj, attr)
            out[j] = val if idx is None else val[idx]
        return out

    def bind(self, p) -> "MultiBodySystem":
        """Copy of the system with parameter values ``p`` written in."""
        self._require()
        p = np.asarray(p, dtype=float).reshape(-1)
        if len(p) != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {len(p)}")
        new = copy.copy(self)
        new.bodies = [copy.copy(b) for b in self.bodies]
        new.obstacles = [copy.copy(o) for o in self.obstacles]
        new.couplings = [copy.copy(c) for c in self.couplings]
        for c in new.couplings:
            if isinstance(c, Motor):
                c.schedule = copy.copy(c.schedule)
                c.schedule.knots = c.schedule.knots.copy()
        new.gravity = self.gravity.copy()
        for b in new.bodies:
            for attr in ("position", "velocity", "rotation", "spin"):
                if hasattr(b, attr):
                    setattr(b, attr, np.array(getattr(b, attr), dtype=float))
        for j, (spec, ti) in enumerate(zip(self.parameters, self._param_targets)):
            obj, attr, idx = new._param_slot(spec, ti)
            if idx is None:
                setattr(obj, attr, float(p[j]))
            else:
                getattr(obj, attr)[idx] = p[j]
        new._mass_diag = new._lumped_mass()
        return new

    def _require(self):
        if not self.finalized:
            raise RuntimeError("system not finalized")

    # ------------------------------------------------------------------ initial state
    def initial_state(self):
        """Initial ``(q, v)`` and their derivatives w.r.t. ``p``.

        Returns ``(q0, v0, dq0_dp, dv0_dp)``; the derivative arrays are dense
        ``(ndof, n_params)``.
        """
        self._require()
        q0 = np.zeros(self.ndof)
        v0 = np.zeros(self.ndof)
        for b, o in zip(self.bodies, self.offsets):
            q, v = b.initial_state()
            q0[o:o + b.ndof] = q
            v0[o:o + b.ndof] = v
        dq = np.zeros((self.ndof, self.n_params))
        dv = np.zeros((self.ndof, self.n_params))
        for j, (spec, ti) in enumerate(zip(self.parameters, self._param_targets)):
            if spec.kind not in INIT_KINDS:
                continue
            b = self.bodies[ti]
            o = self.offsets[ti]
            k = spec.index
            if isinstance(b, SoftBody):
                e_pos, e_vel, e_spin = b.initial_state_derivatives()
                if spec.kind == "init_position":
                    dq[o:o + b.ndof, j] = e_pos[:, k]
                elif spec.kind == "init_velocity":
                    dv[o:o + b.ndof, j] = e_vel[:, k]
                elif spec.kind == "init_spin":
                    dv[o:o + b.ndof, j] = e_spin[:, k]
            elif isinstance(b, PointMass):
                if spec.kind == "init_position":
                    dq[o + k, j] = 1.0
                elif spec.kind == "init_velocity":
                    dv[o + k, j] = 1.0
                else:
                    raise ValueError(f"parameter {spec.name}: point masses have no rotation")
            else:
                dv_dth, dv_dspin = b.initial_state_derivatives()
                if spec.kind == "init_position":
                    dq[o + k, j] = 1.0
                elif spec.kind == "init_velocity":
                    dv[o + k, j] = 1.0
                elif spec.kind == "init_rotation":
                    dq[o + 3 + k, j] = 1.0
                    dv[o:o + 6, j] = dv_dth[:, k]
                else:
                    dv[o:o + 6, j] = dv_dspin[:, k]
        return q0, v0, dq, dv

    # ------------------------------------------------------------------ residual
    def evaluate(self, q, v, a, step: int = 0, jac: bool = True, params: bool = False,
                 constrained: np.ndarray | None = None) -> Evaluation:
        """Residual ``r`` with partials w.r.t. ``q``, ``v``, ``a`` and ``p``.

        ``constrained`` is a boolean mask over contacts whose friction is
        replaced by stick constraints (hybrid model).
        """
        self._require()
        q = np.asarray(q, float)
        v = np.asarray(v, float)
        a = np.asarray(a, float)
        asm = _Assembly(self.ndof, self.n_params, jac, params)
        view = StateView(self, q, v)
        self._bodies_residual(asm, view, a)
        asm.check("bodies")
        info = self._contacts_residual(asm, view, constrained)
        asm.check("contact")
        self._couplings_residual(asm, view, step)
        asm.check("coupling")
        return Evaluation(asm.r, asm.trip, asm.A, info, self.ndof)

    def _param_cols(self, kind, ti=None, index=None):
        out = []
        for j, (spec, t) in enumerate(zip(self.parameters, self._param_targets)):
            if spec.kind == kind and (ti is None or t == ti) and (index is None or spec.index == index):
                out.append(j)
        return out

    def _bodies_residual(self, asm: _Assembly, view: StateView, acc):
        g = self.gravity
        for bi, (b, o) in enumerate(zip(self.bodies, self.offsets)):
            sl = slice(o, o + b.ndof)
            if isinstance(b, RigidBody):
                kin = view.rigid(bi)
                r6, dq, dv, da = inertial_residual(b, view.q[sl], view.v[sl], acc[sl], kin=kin)
                r6[:3] -= b.mass * g
                asm.r[sl] += r6
                idx = np.arange(o, o + 6)
                if asm.jac:
                    asm.block("q", idx[3:], idx[3:], dq[3:, 3:])
                    asm.block("v", idx[3:], idx[3:], dv[3:, 3:])
                    asm.block("a", idx, idx, da)
                if asm.A is not None:
                    for j in self._param_cols("gravity"):
                        asm.A[o + self.parameters[j].index, j] -= b.mass
                continue
            m = self._mass_diag[sl]
            nn = b.ndof // 3
            gfull = np.tile(g, nn)
            asm.r[sl] += m * (acc[sl] - gfull)
            idx = np.arange(o, o + b.ndof)
            if asm.jac:
                asm.diag("a", idx, m)
            if asm.A is not None:
                for j in self._param_cols("gravity"):
                    k = self.parameters[j].index
                    asm.A[o + k:o + b.ndof:3, j] -= m[k::3]
            if not isinstance(b, SoftBody):
                continue
            if asm.A is not None:
                for j in self._param_cols("density", bi):
                    asm.A[sl, j] += m / b.density * (acc[sl] - gfull)
            x = view.q[sl]
            el = b.elastic_forces(x, stiffness=asm.jac)
            asm.r[sl] -= el["force"]
            rows, cols = self._soft_pattern(bi)
            if asm.jac:
                asm.blocks("q", rows, cols, el["K"].ravel())
            if asm.A is not None:
                for j in self._param_cols("youngs", bi):
                    asm.A[sl, j] -= el["force"] / b.youngs
            vis_params = asm.A is not None and self._param_cols("viscosity", bi)
            if b.viscosity > 0 or vis_params:
                vi = b.viscous_forces(x, view.v[sl], jacobians=asm.jac)
                asm.r[sl] -= vi["force"]
                if asm.jac:
                    asm.blocks("v", rows, cols, vi["Kv"].ravel())
                    asm.blocks("q", rows, cols, vi["Kx"].ravel())
                if asm.A is not None:
                    for j in self._param_cols("viscosity", bi):
                        asm.A[sl, j] -= vi["force_nu"]

    def _soft_pattern(self, bi):
        cache = getattr(self, "_soft_patterns", None)
        if cache is None:
            cache = self._soft_patterns = {}
        if bi not in cache:
            d = self.bodies[bi].tet_dofs + self.offsets[bi]
            rows = np.repeat(d, 12, axis=1).ravel()
            cols = np.tile(d, (1, 12)).ravel()
            cache[bi] = (rows, cols)
        return cache[bi]

    # ------------------------------------------------------------------ contacts
    def _contacts_residual(self, asm: _Assembly, view: StateView, constrained):
        m_all = self.n_contacts
        g_all = np.full(m_all, np.inf)
        fn_all = np.zeros(m_all)
        ft_all = np.zeros((m_all, 3))
        reg_all = np.zeros(m_all, dtype=np.int64)
        cf_all = np.zeros(m_all)
        n_all = np.zeros((m_all, 3))
        model, k_t = self.contact, self.k_t
        npt = len(self._pt_base)
        if npt and self.obstacles:
            cols3 = self._pt_base[:, None] + np.arange(3)[None, :]
            X = view.q[cols3]
            V = view.v[cols3]
            for oi, obs in enumerate(self.obstacles):
                first = self._pt_first[oi]
                g, n, dn = obs.gap(X)
                g_all[first:first + npt] = g
                n_all[first:first + npt] = n
                cf_all[first:first + npt] = obs.friction
                sel = np.nonzero(g <= 0.0)[0]
                if not len(sel):
                    continue
                cmask = None if constrained is None else constrained[first + sel]
                bt = ct.evaluate_contacts(g[sel], n[sel], dn[sel], V[sel], obs.friction,
                                          self._pt_kd[sel], model, k_t, cmask)
                ids = first + sel
                fn_all[ids] = bt.fn
                ft_all[ids] = bt.ft
                reg_all[ids] = bt.regime
                c3 = cols3[sel]
                np.add.at(asm.r, c3.ravel(), -bt.f.ravel())
                if asm.jac:
                    rr = np.repeat(c3, 3, axis=1).ravel()
                    cc = np.tile(c3, (1, 3)).ravel()
                    asm.blocks("q", rr, cc, -bt.df_dy.ravel())
                    asm.blocks("v", rr, cc, -bt.df_dv.ravel())
                if asm.A is not None:
                    for j in self._param_cols("friction", oi):
                        np.add.at(asm.A[:, j], c3.ravel(), -bt.df_dcf.ravel())
        for bi, oi, first, count in self._rigid_groups:
            self._rigid_contacts(asm, view, bi, oi, first, count, constrained,
                                 (g_all, fn_all, ft_all, reg_all, cf_all, n_all))
        return dict(g=g_all, fn=fn_all, ft=ft_all, regime=reg_all, cf=cf_all, n=n_all)

    def _rigid_contacts(self, asm, view, bi, oi, first, count, constrained, out):
        b = self.bodies[bi]
        obs = self.obstacles[oi]
        o = self.offsets[bi]
        kin = view.rigid(bi)
        R, J = kin.R, kin.J
        levers, ybody = [], []
        for xb in b.proxy_points:
            r = R @ xb
            levers.append(r)
            ybody.append(r)
        sph_n = obs.normal if obs.kind == "plane" else None
        for cb, rad in b.proxy_spheres:
            rc = R @ cb
            ybody.append(rc)
            levers.append(rc - rad * sph_n)
        levers = np.array(levers)
        ybody = np.array(ybody)
        y = kin.c + levers  # gap point equals contact point for both proxy types
        g, n, dn = obs.gap(y)
        g_all, fn_all, ft_all, reg_all, cf_all, n_all = out
        ids = first + np.arange(count)
        g_all[ids] = g
        n_all[ids] = n
        cf_all[ids] = obs.friction
        sel = np.nonzero(g <= 0.0)[0]
        if not len(sel):
            return
        lev = levers[sel]
        Dy = -skew(ybody[sel]) @ J  # d(gap point)/dtheta
        W = -skew(lev) @ J  # angular block of the velocity Jacobian
        xdot = kin.v + np.cross(kin.omega, lev)
        cmask = None if constrained is None else constrained[ids[sel]]
        bt = ct.evaluate_contacts(g[sel], n[sel], dn[sel], xdot, obs.friction, b.damping,
                                  self.contact, self.k_t, cmask)
        fn_all[ids[sel]] = bt.fn
        ft_all[ids[sel]] = bt.ft
        reg_all[ids[sel]] = bt.regime
        f = bt.f
        Q = np.zeros(6)
        Q[:3] = f.sum(0)
        Q[3:] = np.einsum("mai,ma->i", W, f)
        asm.r[o:o + 6] -= Q
        if asm.jac:
            Wy = np.concatenate([np.broadcast_to(np.eye(3), (len(sel), 3, 3)), Dy], axis=2)
            Wv = np.concatenate([np.broadcast_to(np.eye(3), (len(sel), 3, 3)), W], axis=2)
            dxd = np.zeros((len(sel), 3, 6))
            dxd[:, :, 3:] = -skew(lev) @ kin.P + skew(kin.omega)[None] @ Dy
            dQq = np.einsum("mai,mab,mbj->ij", Wv, bt.df_dy, Wy)
            dQq += np.einsum("mai,mab,mbj->ij", Wv, bt.df_dv, dxd)
            for k in range(len(sel)):
                dQq[3:, 3:] += kin.force_map_theta(lev[k], Dy[k], f[k])
            dQv = np.einsum("mai,mab,mbj->ij", Wv, bt.df_dv, Wv)
            idx = np.arange(o, o + 6)
            asm.block("q", idx, idx, -dQq)
            asm.block("v", idx, idx, -dQv)
        if asm.A is not None:
            for j in self._param_cols("friction", oi):
                asm.A[o:o + 3, j] -= bt.df_dcf.sum(0)
                asm.A[o + 3:o + 6, j] -= np.einsum("mai,ma->i", W, bt.df_dcf)
            for j in self._param_cols("damping", bi):
                asm.A[o:o + 3, j] -= bt.df_dkd.sum(0)
                asm.A[o + 3:o + 6, j] -= np.einsum("mai,ma->i", W, bt.df_dkd)

    # ------------------------------------------------------------------ couplings
    def _couplings_residual(self, asm: _Assembly, view: StateView, step: int):
        for ci, (c, feats) in enumerate(zip(self.couplings, self._coupling_features)):
            if isinstance(c, MotorDamping):
                self._motor_damping(asm, view, c, feats)
                continue
            evals = [f.evaluate(view) for f in feats]
            ys = [e[0] for e in evals]
            alpha = c.schedule.value(step) if isinstance(c, Motor) else None
            cval, C, S, c_alpha, C_alpha = constraint_terms(c, ys, alpha)
            k = c.stiffness
            for (y, cols, U, hess), Cj in zip(evals, C):
                if len(cols):
                    asm.r[cols] += k * (U.T @ (Cj.T @ cval))
            if asm.jac:
                Sd = S(cval) if S is not None else {}
                for j, (_, cj, Uj, hj) in enumerate(evals):
                    if not len(cj):
                        continue
                    for l, (_, cl, Ul, _) in enumerate(evals):
                        if not len(cl):
                            continue
                        B = C[j].T @ C[l]
                        if (j, l) in Sd:
                            B = B + Sd[(j, l)]
                        asm.block("q", cj, cl, k * (Uj.T @ B @ Ul))
                    if hj is not None:
                        asm.block("q", cj, cj, k * hj(C[j].T @ cval))
            if asm.A is not None and isinstance(c, Motor) and ci in self._motor_params:
                Ca = C_alpha(cval)
                dr_dalpha = np.zeros(self.ndof)
                for j, (_, cj, Uj, _) in enumerate(evals):
                    if not len(cj):
                        continue
                    vec = C[j].T @ c_alpha + Ca.get(j, 0.0)
                    dr_dalpha[cj] += k * (Uj.T @ vec)
                idx, w = c.schedule.stencil(step)
                for kk, ww in zip(idx, w):
                    j = self._motor_params[ci].get(int(kk))
                    if j is not None:
                        asm.A[:, j] += ww * dr_dalpha

    def _motor_damping(self, asm, view, c, feats):
        k = c.k_md
        kins = [None if bi is None else view.rigid(bi) for bi in feats]
        om = [np.zeros(3) if kn is None else kn.omega for kn in kins]
        for s in range(2):
            bi, kin = feats[s], kins[s]
            if bi is None:
                continue
            o = self.offsets[bi]
            oth = 1 - s
            tau = k * (om[oth] - om[s])
            asm.r[o + 3:o + 6] -= kin.J.T @ tau
            if not asm.jac:
                continue
            idx = np.arange(o + 3, o + 6)
            asm.block("v", idx, idx, k * kin.J.T @ kin.J)
            asm.block("q", idx, idx, -(kin.torque_map_theta(tau) - k * kin.J.T @ kin.P))
            if feats[oth] is not None:
                ko = kins[oth]
                jdx = np.arange(self.offsets[feats[oth]] + 3, self.offsets[feats[oth]] + 6)
                asm.block("v", idx, jdx, -k * kin.J.T @ ko.J)
                asm.block("q", idx, jdx, -k * kin.J.T @ ko.P)

    # ------------------------------------------------------------------ stick constraints
    def stick_terms(self, q, entries, mu=None, v=None):
        """Stick-constraint rows for hybrid contacts.

        ``entries`` is a list of ``(contact_id, Tbar (2, 3), anchor (3,))``.
        Returns ``(c, G, force, H)``: constraint values ``Tbar (x - anchor)``,
        the sparse Jacobian ``G`` (2m x ndof), the generalized constraint
        force ``G^T mu`` and its sparse ``q`` derivative (zero for nodes).
        """
        view = StateView(self, np.asarray(q, float), np.zeros(self.ndof) if v is None else v)
        m = len(entries)
        cvals = np.zeros(2 * m)
        rows, cols, vals = [], [], []
        force = np.zeros(self.ndof)
        hr, hc, hv = [], [], []
        for e, (cid, Tb, anchor) in enumerate(entries):
            feat = self.contact_table[cid]["feature"]
            x, fc, U, hess = feat.evaluate(view)
            cvals[2 * e:2 * e + 2] = Tb @ (x - anchor)
            B = Tb @ U
            rows.append(np.repeat(np.arange(2 * e, 2 * e + 2), len(fc)))
            cols.append(np.tile(fc, 2))
            vals.append(B.ravel())
            if mu is not None:
                lam = Tb.T @ mu[2 * e:2 * e + 2]
                force[fc] += U.T @ lam
                if hess is not None:
                    H = hess(lam)
                    hr.append(np.repeat(fc, len(fc)))
                    hc.append(np.tile(fc, len(fc)))
                    hv.append(H.ravel())
        if m:
            G = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(2 * m, self.ndof)).tocsr()
        else:
            G = sp.csr_matrix((0, self.ndof))
        if hr:
            H = sp.coo_matrix((np.concatenate(hv), (np.concatenate(hr), np.concatenate(hc))),
                              shape=(self.ndof, self.ndof)).tocsc()
        else:
            H = sp.csc_matrix((self.ndof, self.ndof))
        return cvals, G, force, H

    def contact_position(self, q, cid):
        feat = self.contact_table[cid]["feature"]
        if feat is None:
            raise ValueError("contact has no material point")
        return feat.evaluate(StateView(self, np.asarray(q, float), np.zeros(self.ndof)))[0]

    def stickable(self, cid) -> bool:
        return self.contact_table[cid]["feature"] is not None

    # ------------------------------------------------------------------ diagnostics
    def energy(self, q, v) -> dict:
        """Kinetic, elastic, gravitational, coupling and contact energies."""
        q = np.asarray(q, float)
        v = np.asarray(v, float)
        kin = el = grav = 0.0
        for b, o in zip(self.bodies, self.offsets):
            sl = slice(o, o + b.ndof)
            if isinstance(b, RigidBody):
                R, J = rotation_and_jacobian(q[o + 3:o + 6], order=0)
                w = J @ v[o + 3:o + 6]
                kin += 0.5 * b.mass * v[o:o + 3] @ v[o:o + 3] + 0.5 * w @ (R @ b.inertia @ R.T) @ w
                grav -= b.mass * self.gravity @ q[o:o + 3]
            else:
                m = self._mass_diag[sl]
                kin += 0.5 * np.sum(m * v[sl] ** 2)
                grav -= float(m[::3] @ (q[sl].reshape(-1, 3) @ self.gravity))
                if isinstance(b, SoftBody):
                    el += b.elastic_energy(q[sl])
        view = StateView(self, q, v)
        cen = 0.0
        for c, feats in zip(self.couplings, self._coupling_features):
            if isinstance(c, MotorDamping):
                continue
            ys = [f.evaluate(view)[0] for f in feats]
            alpha = c.schedule.value(0) if isinstance(c, Motor) else None
            cval = constraint_terms(c, ys, alpha)[0]
            cen += 0.5 * c.stiffness * float(cval @ cval)
        ev = self._contacts_residual(_Assembly(self.ndof, 0, False, False), view, None)
        pen = np.where(np.isfinite(ev["g"]), np.minimum(ev["g"], 0.0), 0.0)
        contact_energy = 0.5 * self.contact.k_n * float(pen @ pen)
        return dict(kinetic=float(kin), elastic=float(el), gravity=float(grav),
                    coupling=float(cen), contact=contact_energy,
                    total=float(kin + el + grav + cen + contact_energy))

    def body_slice(self, name) -> slice:
        bi = self._resolve_body(name)
        o = self.offsets[bi]
        return slice(o, o + self.bodies[bi].ndof)

    def body_mass_weights(self, name) -> np.ndarray:
        """Per-node mass fractions for the center of mass of a body."""
        bi = self._resolve_body(name)
        b = self.bodies[bi]
        if isinstance(b, SoftBody):
            m = b.node_masses_unit()
            return m / m.sum()
        return np.ones(1)
