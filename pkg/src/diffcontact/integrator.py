"""Implicit time stepping with BDF1/BDF2 and a line-searched Newton solve.

Velocities are carried as part of the history: BDF1 uses
``v = (q - q1)/dt``, ``a = (v - v1)/dt`` and BDF2 the same pattern with the
three-point formula ``(3x - 4x1 + x2)/(2 dt)``.  Every history slot keeps the
Jacobian of its (possibly re-charted) position and velocity w.r.t. the stored
states, so the per-step lag blocks needed for sensitivities are exact.

Keys of stored states: ``k >= 1`` for step ``k``, ``0`` for the initial
positions and ``-1`` for the initial velocities.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import contact as ct
from .rigid import RigidBody
from .rotation import recenter
from .soft import InvertedElementError
from .system import MultiBodySystem

log = logging.getLogger(__name__)


class BootstrapError(ValueError):
    """Not enough history states for the requested scheme."""


class NonConvergence(RuntimeError):
    """Newton failed to reach the residual tolerance."""

    def __init__(self, msg, residual_norm=np.nan, trace=(), step=None):
        super().__init__(msg)
        self.residual_norm = residual_norm
        self.trace = list(trace)
        self.step = step


@dataclass(frozen=True)
class Integrator:
    scheme: str = "BDF2"
    dt: float = 1.0 / 60.0

    def __post_init__(self):
        if self.scheme not in ("BDF1", "BDF2"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.dt > 0:
            raise ValueError("time step must be positive")


@dataclass(frozen=True)
class SolverConfig:
    eps: float = 1e-10
    eps_half: float = 1e-5
    max_newton_iters: int = 100
    ls_factor: float = 0.5
    ls_min_step: float = 2.0**-20
    watchdog: int = 3  # full steps allowed per solve when backtracking fails
    cache_factorizations: bool = True

    def __post_init__(self):
        if not (0 < self.eps < self.eps_half < 1):
            raise ValueError("require 0 < eps < eps_half < 1")


@dataclass
class GeneralizedState:
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    t: float
    step_index: int


# --------------------------------------------------------------------------- discretization
def _coefficients(scheme: str, dt: float, nhist: int):
    """``(a0, b0, vel_terms, acc_terms)`` with terms ``(slot, 'q'|'v', coef)``."""
    if scheme == "BDF1" or nhist < 2:
        c = 1.0 / dt
        return c, c * c, [(0, "q", -c)], [(0, "q", -c * c), (0, "v", -c)]
    c = 1.0 / (2.0 * dt)
    a0 = 3.0 * c
    vel = [(0, "q", -4.0 * c), (1, "q", c)]
    acc = [(s, k, 3.0 * c * w) for s, k, w in vel] + [(0, "v", -4.0 * c), (1, "v", c)]
    return a0, 3.0 * c * a0, vel, acc


def discretize(history, q_candidate, integrator: Integrator):
    """Velocity and acceleration of ``q_candidate`` given prior states.

    ``history`` lists prior :class:`GeneralizedState` objects, most recent
    last.  BDF1 needs one prior state and BDF2 two (the first BDF2 step is
    taken with BDF1 by the simulator).
    """
    need = 1 if integrator.scheme == "BDF1" else 2
    if len(history) < need:
        raise BootstrapError(f"{integrator.scheme} needs {need} prior states, got {len(history)}")
    hist = list(history)[::-1][:need]
    q = np.asarray(q_candidate, float)
    a0, b0, vel, acc = _coefficients(integrator.scheme, integrator.dt, need)
    qd = a0 * q + sum(w * (hist[s].q if k == "q" else hist[s].qd) for s, k, w in vel)
    qdd = b0 * q + sum(w * (hist[s].q if k == "q" else hist[s].qd) for s, k, w in acc)
    return qd, qdd


# --------------------------------------------------------------------------- jacobian bookkeeping
def _jmul(M, jac):
    """``M @ jac`` where ``jac`` is a scalar (times identity) or sparse."""
    if np.isscalar(jac):
        return M * jac
    return M @ jac


def _jadd(d: dict, key, val):
    if key in d:
        cur = d[key]
        if np.isscalar(cur) and np.isscalar(val):
            d[key] = cur + val
        else:
            d[key] = _as_sparse(cur, val) + _as_sparse(val, cur)
    else:
        d[key] = val


def _as_sparse(x, other):
    if np.isscalar(x):
        n = other.shape[0]
        return sp.identity(n, format="csr") * x
    return x


@dataclass
class _Slot:
    q: np.ndarray
    v: np.ndarray
    dq: dict
    dv: dict


@dataclass
class StepProducts:
    """Derivative blocks of one converged step (augmented with stick rows)."""

    K: sp.csc_matrix
    lags: dict
    A: np.ndarray
    n_q: int
    lu: object = None

    def factor(self):
        if self.lu is not None:
            return self.lu
        try:
            return spla.splu(self.K, permc_spec="COLAMD")
        except RuntimeError as exc:  # singular
            raise NonConvergence(f"singular step Jacobian: {exc}") from exc


@dataclass
class StepInfo:
    newton_trace: list
    regime: np.ndarray
    g: np.ndarray
    fn: np.ndarray
    ft: np.ndarray
    cf: np.ndarray
    stuck: list = field(default_factory=list)
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fallback: bool = False
    label_changes: int = 0
    recentered: list = field(default_factory=list)

    @property
    def coulomb_violation(self) -> float:
        """max over contacts of ``|f_t| - c_f f_n`` (stick reactions included)."""
        if not len(self.fn):
            return -np.inf
        ftn = np.linalg.norm(self.ft, axis=1)
        for k, cid in enumerate(self.stuck):
            ftn[cid] = np.linalg.norm(self.multipliers[2 * k:2 * k + 2])
        return float(np.max(ftn - self.cf * self.fn))


@dataclass
class Trajectory:
    system: MultiBodySystem
    integrator: Integrator
    p: np.ndarray
    states: list
    products: list
    info: list
    dchi_q: np.ndarray
    dchi_v: np.ndarray
    wall_time: float = 0.0

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1

    @property
    def q(self) -> np.ndarray:
        return np.array([s.q for s in self.states])

    @property
    def qd(self) -> np.ndarray:
        return np.array([s.qd for s in self.states])

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def newton_iterations(self) -> list[int]:
        return [len(i.newton_trace) - 1 for i in self.info]


# --------------------------------------------------------------------------- step solver
class _Step:
    def __init__(self, system, slots, step, integrator, config, prev_q, prev_key):
        self.sys = system
        self.slots = slots
        self.step = step
        self.cfg = config
        self.a0, self.b0, self.vel, self.acc = _coefficients(integrator.scheme, integrator.dt, len(slots))
        self.vc = sum(w * (slots[s].q if k == "q" else slots[s].v) for s, k, w in self.vel)
        self.ac = sum(w * (slots[s].q if k == "q" else slots[s].v) for s, k, w in self.acc)
        self.n = system.ndof
        self.prev_q = prev_q  # stored previous state (anchors)
        self.prev_key = prev_key
        self.entries = []  # (cid, Tbar, anchor)
        self.trace = []

    def va(self, q):
        return self.a0 * q + self.vc, self.b0 * q + self.ac

    def mask(self):
        if not self.entries:
            return None
        m = np.zeros(self.sys.n_contacts, dtype=bool)
        for cid, _, _ in self.entries:
            m[cid] = True
        return m

    def residual(self, z, jac=True, params=False):
        q = z[:self.n]
        v, a = self.va(q)
        ev = self.sys.evaluate(q, v, a, self.step, jac=jac, params=params, constrained=self.mask())
        if not self.entries:
            K = ev.combined(1.0, self.a0, self.b0) if jac else None
            return ev.r, K, ev
        mu = z[self.n:]
        c, G, force, H = self.sys.stick_terms(q, self.entries, mu)
        R = np.concatenate([ev.r - force, c])
        K = None
        if jac:
            Kq = ev.combined(1.0, self.a0, self.b0) - H
            m = G.shape[0]
            K = sp.bmat([[Kq, -G.T], [G, sp.csc_matrix((m, m))]], format="csc")
        return R, K, ev

    def project(self, z):
        """Snap stuck nodes onto their anchors in the tangent plane."""
        if not self.entries:
            return z
        z = z.copy()
        for cid, Tb, anchor in self.entries:
            info = self.sys.contact_table[cid]
            if info["kind"] not in ("node", "point"):
                continue
            o = self.sys.offsets[info["body"]] + 3 * (info["local"] if info["kind"] == "node" else 0)
            x = z[o:o + 3]
            nrm = np.cross(Tb[0], Tb[1])
            z[o:o + 3] = anchor + nrm * (nrm @ (x - anchor))
        return z

    def newton(self, z, tol):
        cfg = self.cfg
        z = self.project(z)
        R, K, ev = self._eval_guarded(z)
        if R is None:
            # the extrapolated guess inverted an element; restart from the last positions
            z = z.copy()
            z[:self.n] = self.slots[0].q
            z = self.project(z)
            R, K, ev = self._eval_guarded(z)
        if R is None:
            raise NonConvergence("initial guess inverts an element", np.inf, self.trace, self.step)
        nr = float(np.linalg.norm(R))
        self.trace.append(nr)
        watchdog = cfg.watchdog
        for _ in range(cfg.max_newton_iters):
            if nr < tol:
                return z, R, ev
            try:
                lu = spla.splu(K, permc_spec="COLAMD")
            except RuntimeError as exc:
                raise NonConvergence(f"singular Newton matrix at step {self.step}: {exc}",
                                     nr, self.trace, self.step) from exc
            dz = lu.solve(-R)
            alpha = 1.0
            full = None
            while True:
                zt = self.project(z + alpha * dz)
                Rt, Kt, evt = self._eval_guarded(zt)
                if Rt is not None:
                    nt = float(np.linalg.norm(Rt))
                    if nt < nr:
                        break
                    if full is None:
                        full = (zt, Rt, Kt, evt, nt)
                alpha *= cfg.ls_factor
                if alpha < cfg.ls_min_step:
                    # a kink in the residual (contact onset) can put a hill in
                    # |r| between the iterate and the root; take the full step
                    if watchdog > 0 and full is not None:
                        watchdog -= 1
                        zt, Rt, Kt, evt, nt = full
                        break
                    raise NonConvergence(
                        f"line search failed at step {self.step} (|r|={nr:.3e})", nr, self.trace, self.step
                    )
            z, R, K, ev, nr = zt, Rt, Kt, evt, nt
            self.trace.append(nr)
        if nr < tol:
            return z, R, ev
        raise NonConvergence(
            f"no convergence in {cfg.max_newton_iters} iterations at step {self.step} (|r|={nr:.3e})",
            nr, self.trace, self.step,
        )

    def _eval_guarded(self, z):
        try:
            R, K, ev = self.residual(z)
        except InvertedElementError:
            return None, None, None
        if not np.all(np.isfinite(R)):
            return None, None, None
        return R, K, ev

    # -------------------------------------------------------------- hybrid
    def _stick_candidates(self, ev):
        reg = ev.contacts["regime"]
        return [int(c) for c in np.nonzero(reg == ct.STICK)[0] if self.sys.stickable(int(c))]

    def _entry(self, cid, ev):
        n = ev.contacts["n"][cid]
        Tb = ct.tangent_basis(n)
        anchor = self.sys.contact_position(self.prev_q, cid)
        return (cid, Tb, anchor), Tb @ ev.contacts["ft"][cid]

    def _violations(self, z, ev):
        out = []
        mu = z[self.n:]
        for k, (cid, _, _) in enumerate(self.entries):
            g = ev.contacts["g"][cid]
            lim = ev.contacts["cf"][cid] * ev.contacts["fn"][cid]
            if g >= 0 or np.linalg.norm(mu[2 * k:2 * k + 2]) > lim:
                out.append(k)
        return out

    def _drop(self, z, ks):
        keep = [k for k in range(len(self.entries)) if k not in set(ks)]
        mu = z[self.n:]
        self.entries = [self.entries[k] for k in keep]
        mu_new = np.concatenate([mu[2 * k:2 * k + 2] for k in keep]) if keep else np.zeros(0)
        return np.concatenate([z[:self.n], mu_new])

    def solve_hybrid(self, q0, mode, warm, max_changes):
        cfg = self.cfg
        changes: dict[int, int] = {}

        def bump(cid):
            changes[cid] = changes.get(cid, 0) + 1
            if changes[cid] > max_changes:
                raise _Oscillation()

        if mode == "residual":
            z, R, ev = self.newton(q0, cfg.eps_half)
            new, mus = [], []
            for cid in self._stick_candidates(ev):
                e, mu = self._entry(cid, ev)
                new.append(e)
                mus.append(mu)
                bump(cid)
            if new:
                self.entries = new
                z = np.concatenate([z, np.concatenate(mus)])
            while True:
                z, R, ev = self.newton(z, cfg.eps_half)
                bad = self._violations(z, ev)
                if bad:
                    for k in bad:
                        bump(self.entries[k][0])
                    z = self._drop(z, bad)
                    continue
                z, R, ev = self.newton(z, cfg.eps)
                bad = self._violations(z, ev)
                if bad:
                    for k in bad:
                        bump(self.entries[k][0])
                    z = self._drop(z, bad)
                    continue
                return z, ev, sum(changes.values())
        # active-set labelling warm-started from the previous step
        _, _, ev0 = self.residual(q0, jac=False)
        entries, mus = [], []
        for cid in warm:
            if ev0.contacts["g"][cid] < 0 and self.sys.stickable(cid):
                e, _ = self._entry(cid, ev0)
                entries.append(e)
                mus.append(np.zeros(2))
        self.entries = entries
        z = np.concatenate([q0] + mus) if mus else q0.copy()
        # contacts released during this step stay sliding until the next one,
        # otherwise the penalty label can re-stick them and cycle
        released: set[int] = set()
        while True:
            z, R, ev = self.newton(z, cfg.eps)
            bad = self._violations(z, ev)
            stuck_ids = {e[0] for e in self.entries}
            add = [c for c in self._stick_candidates(ev) if c not in stuck_ids and c not in released]
            if not bad and not add:
                return z, ev, sum(changes.values())
            for k in bad:
                bump(self.entries[k][0])
                released.add(self.entries[k][0])
            z = self._drop(z, bad)
            extra = []
            for cid in add:
                e, mu = self._entry(cid, ev)
                self.entries.append(e)
                extra.append(mu)
                bump(cid)
            if extra:
                z = np.concatenate([z] + extra)


class _Oscillation(Exception):
    pass


# --------------------------------------------------------------------------- simulation
def _lag_blocks(ev, step: _Step, slots):
    Kv = ev.matrix("v")
    Ka = ev.matrix("a")
    lags: dict = {}
    for terms, M in ((step.vel, Kv), (step.acc, Ka)):
        for s, kind, w in terms:
            jd = slots[s].dq if kind == "q" else slots[s].dv
            for key, jac in jd.items():
                _jadd(lags, key, _jmul(M * w, jac))
    return {k: (sp.csr_matrix(v) if not np.isscalar(v) else v) for k, v in lags.items()}


def _recenter_slots(system, slots):
    done = []
    for bi, b in enumerate(system.bodies):
        if not isinstance(b, RigidBody):
            continue
        o = system.offsets[bi] + 3
        if recenter(slots[0].q[o:o + 3]) is None:
            continue
        done.append(b.name)
        n = system.ndof
        for slot in slots:
            res = recenter(slot.q[o:o + 3])
            if res is None:
                # same chart change keeps the slots consistent; compute it directly
                th = slot.q[o:o + 3]
                a = np.linalg.norm(th)
                res = _forced_recenter(th, a)
            new, D, dD = res
            vt = slot.v[o:o + 3].copy()
            slot.q[o:o + 3] = new
            slot.v[o:o + 3] = D @ vt
            Cq = sp.identity(n, format="lil")
            Cq[o:o + 3, o:o + 3] = D
            Cq = Cq.tocsr()
            E = sp.lil_matrix((n, n))
            E[o:o + 3, o:o + 3] = np.stack([dD[k] @ vt for k in range(3)], axis=1)
            E = E.tocsr()
            dq_old = dict(slot.dq)
            slot.dq = {k: _jmul(Cq, j) if not np.isscalar(j) else Cq * j for k, j in dq_old.items()}
            dv = {}
            for k, j in slot.dv.items():
                _jadd(dv, k, Cq @ _as_sparse(j, Cq))
            for k, j in dq_old.items():
                _jadd(dv, k, E @ _as_sparse(j, E))
            slot.dv = dv
    return done


def _forced_recenter(theta, a):
    c = 2.0 * np.pi
    new = theta * (1.0 - c / a)
    D = (1.0 - c / a) * np.eye(3) + c * np.outer(theta, theta) / a**3
    dD = np.empty((3, 3, 3))
    for k in range(3):
        ek = np.eye(3)[k]
        dD[k] = (c * theta[k] / a**3 * np.eye(3) + c / a**3 * (np.outer(ek, theta) + np.outer(theta, ek))
                 - 3.0 * c * theta[k] / a**5 * np.outer(theta, theta))
    return new, D, dD


def simulate(system: MultiBodySystem, integrator: Integrator, p=None, n_steps: int = 1,
             config: SolverConfig | None = None, keep_products: bool = True,
             callback=None) -> Trajectory:
    """Run ``n_steps`` implicit steps and keep what the sensitivity sweeps need.

    Raises
    ------
    NonConvergence
        With the failing step index attached.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    config = config or SolverConfig()
    t0 = time.perf_counter()
    if not system.finalized:
        system.finalize(integrator.dt)
    if p is None:
        p = system.get_parameters()
    p = np.asarray(p, dtype=float)
    bound = system.bind(p)
    bound.k_t = bound.contact.tangential_stiffness(integrator.dt)
    q0, v0, dq0, dv0 = bound.initial_state()
    slots = [_Slot(q0.copy(), v0.copy(), {0: 1.0}, {-1: 1.0})]
    states = [GeneralizedState(q0.copy(), v0.copy(), np.zeros_like(q0), 0.0, 0)]
    products, infos = [], []
    variant = bound.contact.variant
    warm: list[int] = []
    for i in range(1, n_steps + 1):
        prev_q = states[-1].q
        step = _Step(bound, slots, i, integrator, config, prev_q, i - 1)
        qg = slots[0].q + integrator.dt * slots[0].v
        fallback = False
        changes = 0
        try:
            if variant == "hybrid":
                try:
                    z, ev, changes = step.solve_hybrid(qg, bound.contact.hybrid_mode, warm,
                                                       bound.contact.max_changes)
                except (_Oscillation, NonConvergence) as exc:
                    log.info("step %d: hybrid protocol fell back to penalty (%s)", i, exc)
                    step.entries = []
                    step.trace = []
                    fallback = True
                    z, _, ev = step.newton(qg, config.eps)
            else:
                z, _, ev = step.newton(qg, config.eps)
        except NonConvergence as exc:
            exc.step = i
            raise NonConvergence(f"step {i}: {exc}", exc.residual_norm, exc.trace, i) from exc
        q = z[:bound.ndof].copy()
        v, a = step.va(q)
        # blocks at the converged state
        R, K, evp = step.residual(z, jac=True, params=True)
        n_c = len(step.entries)
        m = 2 * n_c
        lags = _lag_blocks(evp, step, slots)
        if m:
            _, Gp, _, _ = bound.stick_terms(prev_q, step.entries)
            lags = {k: sp.vstack([_as_sparse(L, sp.csr_matrix((bound.ndof, bound.ndof))),
                                  sp.csr_matrix((m, bound.ndof))]).tocsr()
                    for k, L in lags.items()}
            key = i - 1
            extra = sp.vstack([sp.csr_matrix((bound.ndof, bound.ndof)), -Gp]).tocsr()
            lags[key] = lags[key] + extra if key in lags else extra
            A = np.vstack([evp.A, np.zeros((m, bound.n_params))])
        else:
            A = evp.A
        if keep_products:
            prod = StepProducts(K=K, lags=lags, A=A, n_q=bound.ndof)
            if config.cache_factorizations:
                prod.lu = prod.factor()
            products.append(prod)
        c = evp.contacts
        infos.append(StepInfo(newton_trace=list(step.trace), regime=c["regime"].copy(), g=c["g"].copy(),
                              fn=c["fn"].copy(), ft=c["ft"].copy(), cf=c["cf"].copy(),
                              stuck=[e[0] for e in step.entries], multipliers=z[bound.ndof:].copy(),
                              fallback=fallback, label_changes=changes))
        warm = [e[0] for e in step.entries]
        states.append(GeneralizedState(q.copy(), v.copy(), a.copy(), i * integrator.dt, i))
        # advance history
        new = _Slot(q.copy(), v.copy(), {i: 1.0}, {})
        _jadd(new.dv, i, step.a0)
        for s, kind, w in step.vel:
            jd = slots[s].dq if kind == "q" else slots[s].dv
            for key, jac in jd.items():
                _jadd(new.dv, key, jac * w if np.isscalar(jac) else jac * w)
        keep = 1 if integrator.scheme == "BDF1" else 2
        slots = [new] + slots[:keep - 1]
        infos[-1].recentered = _recenter_slots(bound, slots)
        if callback is not None:
            callback(i, states[-1])
    return Trajectory(system=bound, integrator=integrator, p=p, states=states, products=products,
                      info=infos, dchi_q=dq0, dchi_v=dv0, wall_time=time.perf_counter() - t0)


def solve_step(system, history, integrator, p=None, config=None):
    """Solve one step from an explicit history of states.

    ``history`` lists prior states (most recent last); velocities stored in
    the states are used by the discretization.  Returns the new state.
    """
    config = config or SolverConfig()
    if not system.finalized:
        system.finalize(integrator.dt)
    bound = system.bind(system.get_parameters() if p is None else p)
    bound.k_t = bound.contact.tangential_stiffness(integrator.dt)
    need = 1 if integrator.scheme == "BDF1" else 2
    if len(history) < 1:
        raise BootstrapError("need at least one prior state")
    hist = list(history)[::-1][:need]
    slots = [_Slot(h.q.copy(), h.qd.copy(), {}, {}) for h in hist]
    i = hist[0].step_index + 1
    step = _Step(bound, slots, i, integrator, config, hist[0].q, i - 1)
    qg = slots[0].q + integrator.dt * slots[0].v
    if bound.contact.variant == "hybrid":
        z, _, _ = step.solve_hybrid(qg, bound.contact.hybrid_mode, [], bound.contact.max_changes)
    else:
        z, _, _ = step.newton(qg, config.eps)
    q = z[:bound.ndof]
    v, a = step.va(q)
    st = GeneralizedState(q.copy(), v, a, hist[0].t + integrator.dt, i)
    st.newton_trace = list(step.trace)
    return st


def assemble_residual(system, q, history, integrator, p=None, step: int | None = None):
    """Residual and partials at a candidate ``q`` given prior states.

    Returns ``(r, dr_dq, evaluation)`` where ``dr_dq`` already includes the
    discretization coefficients.
    """
    if not system.finalized:
        system.finalize(integrator.dt)
    bound = system.bind(system.get_parameters() if p is None else p)
    bound.k_t = bound.contact.tangential_stiffness(integrator.dt)
    need = 1 if integrator.scheme == "BDF1" else 2
    hist = list(history)[::-1][:need]
    a0, b0, _, _ = _coefficients(integrator.scheme, integrator.dt, len(hist))
    qd, qdd = discretize(history, q, Integrator(integrator.scheme if len(hist) >= need else "BDF1",
                                                integrator.dt))
    i = step if step is not None else hist[0].step_index + 1
    ev = bound.evaluate(q, qd, qdd, i, jac=True, params=True)
    return ev.r, ev.combined(1.0, a0, b0), ev
