"""Direct sensitivities and adjoint gradients over a stored trajectory.

Each converged step satisfies ``R_i(z_i, stored states, p) = 0`` where
``z_i`` holds the end-of-step positions plus any stick-constraint
multipliers.  Linearizing gives

    K_i dz_i + sum_k L_{i,k} dq_k + A_i dp = 0,

with ``q_0``/``v_0`` (keys 0 and -1) depending on ``p`` through the initial
conditions.  The direct sweep runs this forward; the adjoint sweep runs the
transposed system backward with one solve per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .integrator import NonConvergence, SolverConfig, Trajectory, simulate


@dataclass
class AdjointResult:
    gradient: np.ndarray
    adjoint: list
    n_solves: int


def _factor(prod, i):
    try:
        return prod.factor()
    except NonConvergence as exc:
        raise NonConvergence(f"singular step Jacobian at step {i}") from exc


def sensitivity_sweep(traj: Trajectory) -> list[np.ndarray]:
    """Per-step sensitivity blocks ``s^i = dq^i/dp`` for ``i = 0..n_t``.

    Returns a list of dense ``(ndof, n_params)`` arrays; the multiplier part
    of hybrid steps is dropped.
    """
    stored = {0: traj.dchi_q, -1: traj.dchi_v}
    out = [traj.dchi_q.copy()]
    for i, prod in enumerate(traj.products, start=1):
        rhs = np.array(prod.A, dtype=float, copy=True)
        for key, L in prod.lags.items():
            rhs += L @ stored[key]
        if rhs.shape[1] == 0:
            s = np.zeros((prod.n_q, 0))
        else:
            s = -_factor(prod, i).solve(rhs)[:prod.n_q]
        stored[i] = s
        out.append(s)
    return out


def adjoint_sweep(traj: Trajectory, dphi_dq: np.ndarray, dphi_dp: np.ndarray | None = None) -> AdjointResult:
    """Gradient ``dPhi/dp`` via one backward pass.

    Parameters
    ----------
    dphi_dq : (n_t + 1, ndof) array
        Partial derivatives of the objective w.r.t. every stored state,
        including the initial positions in row 0.
    dphi_dp : (n_params,) array, optional
        Explicit partial derivative of the objective w.r.t. ``p``.
    """
    n_p = traj.dchi_q.shape[1]
    grad = np.zeros(n_p) if dphi_dp is None else np.array(dphi_dp, dtype=float, copy=True)
    n = traj.system.ndof
    pending: dict[int, np.ndarray] = {}
    lams = [None] * (traj.n_steps + 1)
    solves = 0
    for i in range(traj.n_steps, 0, -1):
        prod = traj.products[i - 1]
        rhs = np.zeros(prod.K.shape[0])
        rhs[:n] = dphi_dq[i] - pending.pop(i, 0.0)
        lam = _factor(prod, i).solve(rhs, trans="T")
        solves += 1
        lams[i] = lam
        if n_p:
            grad -= lam @ prod.A
        for key, L in prod.lags.items():
            contrib = L.T @ lam
            pending[key] = pending[key] + contrib if key in pending else contrib
    grad += dphi_dq[0] @ traj.dchi_q
    if 0 in pending:
        grad -= pending[0] @ traj.dchi_q
    if -1 in pending:
        grad -= pending[-1] @ traj.dchi_v
    return AdjointResult(gradient=grad, adjoint=lams, n_solves=solves)


def direct_gradient(traj: Trajectory, dphi_dq, dphi_dp=None, S=None) -> np.ndarray:
    """``dPhi/dp`` from the sensitivity matrix (forward formulation)."""
    if S is None:
        S = sensitivity_sweep(traj)
    n_p = traj.dchi_q.shape[1]
    g = np.zeros(n_p) if dphi_dp is None else np.array(dphi_dp, dtype=float, copy=True)
    for i, s in enumerate(S):
        g += dphi_dq[i] @ s
    return g


def regime_signature(traj: Trajectory) -> tuple:
    """Hashable per-step contact labels (including stuck sets and fallbacks)."""
    return tuple(
        (info.regime.tobytes(), tuple(info.stuck), info.fallback, tuple(info.recentered))
        for info in traj.info
    )


def gradient_check(system, integrator, objective, p, n_steps, h=None, config: SolverConfig | None = None,
                   indices=None, rel_floor: float = 1e-6):
    """Compare adjoint gradients with central finite differences.

    Perturbed runs whose contact labels differ from the nominal run are
    genuine nonsmooth points: if only one side keeps the labels a one-sided
    difference is used, and if neither does the component is excluded.

    Returns a dict with ``adjoint``, ``fd``, ``rel_error``, ``kind`` (one of
    ``central``, ``forward``, ``backward``, ``excluded``) and
    ``max_rel_error`` over the checked components.
    """
    p = np.asarray(p, dtype=float)
    config = config or SolverConfig()
    traj = simulate(system, integrator, p, n_steps, config)
    phi, dq, dp = objective.evaluate(traj, p)
    adj = adjoint_sweep(traj, dq, dp).gradient
    sig = regime_signature(traj)
    idx = range(len(p)) if indices is None else indices
    fd = np.full(len(p), np.nan)
    kind = ["skipped"] * len(p)

    def run(pp):
        try:
            t = simulate(system, integrator, pp, n_steps, config, keep_products=False)
        except NonConvergence:
            return None, None
        return objective.evaluate(t, pp)[0], regime_signature(t)

    for j in idx:
        hj = (1e-6 * (1.0 + abs(p[j]))) if h is None else h
        e = np.zeros(len(p))
        e[j] = hj
        fp, sp_ = run(p + e)
        fm, sm = run(p - e)
        okp = fp is not None and sp_ == sig
        okm = fm is not None and sm == sig
        if okp and okm:
            fd[j] = (fp - fm) / (2 * hj)
            kind[j] = "central"
        elif okp:
            fd[j] = (fp - phi) / hj
            kind[j] = "forward"
        elif okm:
            fd[j] = (phi - fm) / hj
            kind[j] = "backward"
        else:
            kind[j] = "excluded"
    checked = [j for j in idx if kind[j] in ("central", "forward", "backward")]
    scale = np.max(np.abs(fd[checked])) if checked else 0.0
    floor = max(rel_floor * scale, 1e-300)
    rel = np.full(len(p), np.nan)
    for j in checked:
        rel[j] = abs(adj[j] - fd[j]) / max(abs(fd[j]), floor)
    max_rel = float(np.nanmax(rel[checked])) if checked else 0.0
    return dict(phi=phi, adjoint=adj, fd=fd, rel_error=rel, kind=kind, max_rel_error=max_rel,
                names=list(system.param_names), excluded=[j for j in idx if kind[j] == "excluded"])
