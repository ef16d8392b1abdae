"""Differentiable objectives over simulated trajectories.

Every term is a weighted sum of squared residual vectors,
``Phi = sum_k w_k |r_k|^2``, where each residual depends on the positions of
one stored step and/or on the parameter vector.  ``Objective.evaluate``
returns ``Phi`` with the partials ``dPhi/dq`` (one row per stored state) and
``dPhi/dp`` used by the adjoint sweep; ``Objective.least_squares`` exposes
the stacked residuals and their Jacobian for Gauss-Newton.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .rigid import RigidBody
from .rotation import rotation_and_jacobian, skew
from .soft import SoftBody
from .system import MultiBodySystem, PointMass


# --------------------------------------------------------------------------- features
@dataclass
class Feature:
    """A world-space point tracked on a body.

    ``kind`` is one of ``node`` (soft-body node index), ``com`` (center of
    mass of any body) or ``point`` (body-frame point on a rigid body, or
    rest-shape location snapped to the nearest node of a soft body).
    """

    body: str
    kind: str = "com"
    node: int = 0
    local: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.kind not in ("node", "com", "point"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        self.local = np.asarray(self.local, dtype=float).reshape(3)

    def evaluate(self, system: MultiBodySystem, q: np.ndarray):
        """Return ``(y, cols, U)`` with ``U = dy/dq[cols]``."""
        bi = system.body_index[self.body]
        b = system.bodies[bi]
        o = system.offsets[bi]
        if isinstance(b, PointMass):
            cols = o + np.arange(3)
            return q[cols].copy(), cols, np.eye(3)
        if isinstance(b, RigidBody):
            c = q[o:o + 3]
            if self.kind == "com":
                cols = o + np.arange(3)
                return c.copy(), cols, np.eye(3)
            if self.kind == "node":
                raise ValueError(f"rigid body {self.body!r} has no nodes")
            R, J = rotation_and_jacobian(q[o + 3:o + 6], order=0)
            r = R @ self.local
            U = np.hstack([np.eye(3), -skew(r) @ J])
            return c + r, o + np.arange(6), U
        assert isinstance(b, SoftBody)
        if self.kind == "com":
            w = system.body_mass_weights(self.body)
            x = q[o:o + b.ndof].reshape(-1, 3)
            U = np.kron(w[None, :], np.eye(3))
            return w @ x, o + np.arange(b.ndof), U
        node = self.node if self.kind == "node" else self.snap(b)
        cols = o + 3 * node + np.arange(3)
        return q[cols].copy(), cols, np.eye(3)

    def snap(self, body: SoftBody) -> int:
        return int(np.argmin(np.linalg.norm(body.rest_positions - self.local, axis=1)))


@dataclass
class Residual:
    """One weighted residual block ``r`` at stored step ``step``.

    ``Jq`` is ``dr/dq[cols]``; ``Jp`` (optional) is ``dr/dp`` as a dense
    ``(m, n_params)`` array.  ``step=None`` marks parameter-only residuals.
    """

    step: int | None
    r: np.ndarray
    cols: np.ndarray
    Jq: np.ndarray
    Jp: np.ndarray | None = None


def _steps(spec, n_t: int) -> list[int]:
    """Resolve a step selection (None = final, int, (start, stop) or list)."""
    if spec is None:
        return [n_t]
    if isinstance(spec, (int, np.integer)):
        s = int(spec)
        return [n_t + 1 + s if s < 0 else s]
    if isinstance(spec, tuple) and len(spec) == 2:
        lo, hi = spec
        hi = n_t if hi is None else min(int(hi), n_t)
        return list(range(max(int(lo), 1), hi + 1))
    return [int(s) for s in spec]


def _check_steps(steps, n_t, who):
    for s in steps:
        if not 1 <= s <= n_t:
            raise ValueError(f"{who}: step {s} outside [1, {n_t}]")


# --------------------------------------------------------------------------- terms
@dataclass
class TerminalPointTarget:
    """Squared distance of a feature to a fixed target at one step."""

    feature: Feature
    target: np.ndarray
    step: int | None = None
    weight: float = 1.0

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float).reshape(3)

    def residuals(self, system, traj, p):
        (s,) = _steps(self.step, traj.n_steps)
        _check_steps([s], traj.n_steps, "terminal target")
        y, cols, U = self.feature.evaluate(system, traj.states[s].q)
        return [Residual(s, y - self.target, cols, U)]


@dataclass
class LinePathTarget:
    """Squared distance of a feature to a line over a window of steps."""

    feature: Feature
    point: np.ndarray
    direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    steps: object = (1, None)
    weight: float = 1.0

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float).reshape(3)
        d = np.asarray(self.direction, dtype=float).reshape(3)
        self.direction = d / np.linalg.norm(d)

    def residuals(self, system, traj, p):
        P = np.eye(3) - np.outer(self.direction, self.direction)
        steps = _steps(self.steps, traj.n_steps)
        _check_steps(steps, traj.n_steps, "line target")
        out = []
        for s in steps:
            y, cols, U = self.feature.evaluate(system, traj.states[s].q)
            out.append(Residual(s, P @ (y - self.point), cols, P @ U))
        return out


@dataclass
class TrajectoryMatch:
    """Squared distances of several features to per-step targets.

    ``targets`` has shape ``(n_steps + 1, n_features, 3)`` (row 0 is the
    initial state); NaN rows mark missing observations.
    """

    features: list
    targets: np.ndarray
    steps: object = (1, None)
    weight: float = 1.0

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=float)

    def residuals(self, system, traj, p):
        steps = _steps(self.steps, traj.n_steps)
        _check_steps(steps, traj.n_steps, "trajectory match")
        if self.targets.shape[0] <= max(steps):
            raise ValueError("trajectory match: target data shorter than the step window")
        out = []
        for s in steps:
            q = traj.states[s].q
            for k, f in enumerate(self.features):
                t = self.targets[s, k]
                if np.any(np.isnan(t)):
                    continue
                y, cols, U = f.evaluate(system, q)
                out.append(Residual(s, y - t, cols, U))
        return out


@dataclass
class PoseTarget:
    """Feature targets at one step plus an upright term for a rigid body.

    The upright term penalizes ``|R a - up|^2`` for the body-frame axis
    ``a`` of ``upright_body`` with weight ``upright_weight``.
    """

    features: list
    targets: np.ndarray
    step: int | None = None
    upright_body: str | None = None
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    upright_weight: float = 1.0
    weight: float = 1.0

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1, 3)
        self.axis = np.asarray(self.axis, dtype=float) / np.linalg.norm(self.axis)
        self.up = np.asarray(self.up, dtype=float) / np.linalg.norm(self.up)

    def residuals(self, system, traj, p):
        (s,) = _steps(self.step, traj.n_steps)
        _check_steps([s], traj.n_steps, "pose target")
        q = traj.states[s].q
        out = []
        for f, t in zip(self.features, self.targets):
            y, cols, U = f.evaluate(system, q)
            out.append(Residual(s, y - t, cols, U))
        if self.upright_body is not None and self.upright_weight > 0:
            bi = system.body_index[self.upright_body]
            if not isinstance(system.bodies[bi], RigidBody):
                raise ValueError("upright term needs a rigid body")
            o = system.offsets[bi]
            R, J = rotation_and_jacobian(q[o + 3:o + 6], order=0)
            u = R @ self.axis
            sw = np.sqrt(self.upright_weight)
            out.append(Residual(s, sw * (u - self.up), o + 3 + np.arange(3), -sw * skew(u) @ J))
        return out


@dataclass
class ControlSmoothness:
    """``beta * sum_i |p[i+1] - p[i]|^2`` over consecutive control groups.

    ``groups`` lists parameter-index arrays, one per control knot.
    """

    groups: list
    beta: float = 1.0
    weight: float = 1.0

    def residuals(self, system, traj, p):
        out = []
        sb = np.sqrt(self.beta)
        n_p = len(p)
        for g0, g1 in zip(self.groups[:-1], self.groups[1:]):
            g0 = np.atleast_1d(g0)
            g1 = np.atleast_1d(g1)
            Jp = np.zeros((len(g0), n_p))
            Jp[np.arange(len(g0)), g1] += sb
            Jp[np.arange(len(g0)), g0] -= sb
            out.append(Residual(None, sb * (p[g1] - p[g0]), np.zeros(0, dtype=np.int64),
                                np.zeros((len(g0), 0)), Jp))
        return out


# --------------------------------------------------------------------------- objective
@dataclass
class Objective:
    terms: list = field(default_factory=list)

    def __post_init__(self):
        for t in self.terms:
            if t.weight < 0:
                raise ValueError("objective weights must be non-negative")

    def _blocks(self, traj, p):
        for t in self.terms:
            for res in t.residuals(traj.system, traj, p):
                yield t.weight, res

    def evaluate(self, traj, p=None):
        """Return ``(Phi, dPhi/dq (n_t + 1, ndof), dPhi/dp)``."""
        system = traj.system
        p = traj.p if p is None else np.asarray(p, dtype=float)
        dq = np.zeros((traj.n_steps + 1, system.ndof))
        dp = np.zeros(len(p))
        phi = 0.0
        for w, res in self._blocks(traj, p):
            if w == 0.0:
                continue
            phi += w * float(res.r @ res.r)
            if res.step is not None and len(res.cols):
                np.add.at(dq[res.step], res.cols, 2.0 * w * (res.Jq.T @ res.r))
            if res.Jp is not None:
                dp += 2.0 * w * (res.Jp.T @ res.r)
        return phi, dq, dp

    def value(self, traj, p=None) -> float:
        p = traj.p if p is None else np.asarray(p, dtype=float)
        return float(sum(w * float(res.r @ res.r) for w, res in self._blocks(traj, p)))

    def least_squares(self, traj, p, S):
        """Stacked residual ``r`` and ``dr/dp`` with ``Phi = |r|^2``.

        ``S`` is the list of per-step sensitivity blocks ``dq^i/dp``.
        """
        n_p = len(p)
        rs, Js = [], []
        for w, res in self._blocks(traj, p):
            if w == 0.0:
                continue
            sw = np.sqrt(w)
            J = np.zeros((len(res.r), n_p))
            if res.step is not None and len(res.cols):
                J += res.Jq @ S[res.step][res.cols]
            if res.Jp is not None:
                J += res.Jp
            rs.append(sw * res.r)
            Js.append(sw * J)
        if not rs:
            return np.zeros(0), np.zeros((0, n_p))
        return np.concatenate(rs), np.vstack(Js)


# --------------------------------------------------------------------------- markers
def record_markers(traj, features) -> np.ndarray:
    """Feature positions for every stored state, shape ``(n_t + 1, m, 3)``."""
    out = np.zeros((traj.n_steps + 1, len(features), 3))
    for s, st in enumerate(traj.states):
        for k, f in enumerate(features):
            out[s, k] = f.evaluate(traj.system, st.q)[0]
    return out


def add_uniform_noise(markers: np.ndarray, level: float, seed: int = 0) -> np.ndarray:
    """Add i.i.d. uniform noise in ``[-level, level]`` (row 0 is kept exact)."""
    rng = np.random.default_rng(seed)
    noisy = np.array(markers, dtype=float, copy=True)
    noisy[1:] += rng.uniform(-level, level, size=noisy[1:].shape)
    return noisy


def write_markers_csv(markers: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "marker_id", "x", "y", "z"])
    for s in range(markers.shape[0]):
        for k in range(markers.shape[1]):
            w.writerow([s, k] + [repr(float(x)) for x in markers[s, k]])
    return buf.getvalue()


def read_markers_csv(text: str) -> np.ndarray:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        return np.zeros((0, 0, 3))
    n_s = max(int(r["step"]) for r in rows) + 1
    n_m = max(int(r["marker_id"]) for r in rows) + 1
    out = np.full((n_s, n_m, 3), np.nan)
    for r in rows:
        out[int(r["step"]), int(r["marker_id"])] = [float(r["x"]), float(r["y"]), float(r["z"])]
    return out
