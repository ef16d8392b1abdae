"""Gradient-based optimization over simulation parameters.

``OptimizationProblem`` wraps a system, an objective and a free-parameter
mask and turns them into a smooth function of an unconstrained-ish vector
``x`` (log-space for positive material constants, box bounds elsewhere).
Drivers: projected L-BFGS with a strong-Wolfe line search, ADAM,
Levenberg-Marquardt style Gauss-Newton on direct sensitivities,
continuation on the contact stiffness and the staged estimation pipeline.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .integrator import Integrator, NonConvergence, SolverConfig, simulate
from .objectives import Objective, TrajectoryMatch
from .sensitivity import adjoint_sweep, sensitivity_sweep
from .soft import InvertedElementError
from .system import AssemblyError, MultiBodySystem

log = logging.getLogger(__name__)

CONTINUATION_SCHEDULE = (100.0, 200.0, 400.0, 800.0, 1000.0)


class BudgetExhausted(Exception):
    """The simulation budget ran out before a requested evaluation."""


class TrialFailed(Exception):
    """A trial point could not be simulated (nonconvergence or inversion)."""


class OptimizerAbort(RuntimeError):
    """Persistent simulation failure; carries the optimization trace."""

    def __init__(self, msg, history=()):
        super().__init__(msg)
        self.history = list(history)


@dataclass
class OptimizerConfig:
    method: str = "lbfgs"  # lbfgs | adam | gauss-newton
    max_simulations: int = 100
    max_iterations: int = 1000
    gtol: float = 1e-12
    ftol: float = 1e-14
    phi_target: float = 0.0
    memory: int = 10
    initial_step: float | None = None
    adam_lr: float = 1e-2
    adam_beta1: float = 0.95
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lm_damping: float = 1e-3
    max_failures: int = 20

    def __post_init__(self):
        if self.method not in ("lbfgs", "adam", "gauss-newton"):
            raise ValueError(f"unknown optimizer {self.method!r}")


@dataclass
class OptimizeResult:
    p: np.ndarray
    phi: float
    phi0: float
    history: list
    n_simulations: int
    status: str
    stages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "phi": self.phi,
            "phi0": self.phi0,
            "parameters": [float(v) for v in self.p],
            "simulations": self.n_simulations,
            "history": self.history,
            "stages": self.stages,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# --------------------------------------------------------------------------- problem
class OptimizationProblem:
    """Objective as a function of the free parameters.

    Parameters
    ----------
    free : sequence of int or names, optional
        Indices (or names) into the system parameter vector that are
        optimized; the rest stay at ``p0``.  Default: all.
    p0 : array, optional
        Full parameter vector; default the values stored in the scene.
    """

    def __init__(self, system: MultiBodySystem, integrator: Integrator, objective: Objective,
                 n_steps: int, free=None, p0=None, solver: SolverConfig | None = None,
                 max_simulations: int | None = None):
        self.system = system
        if not system.finalized:
            system.finalize(integrator.dt)
        self.integrator = integrator
        self.objective = objective
        self.n_steps = int(n_steps)
        self.solver = solver or SolverConfig()
        self.p0 = system.get_parameters() if p0 is None else np.array(p0, dtype=float)
        names = system.param_names
        if free is None:
            free = range(len(self.p0))
        self.free = np.array([names.index(f) if isinstance(f, str) else int(f) for f in free], dtype=np.int64)
        specs = [system.parameters[j] for j in self.free]
        self.log = np.array([s.log for s in specs], dtype=bool)
        lo = np.array([s.lower for s in specs], dtype=float)
        hi = np.array([s.upper for s in specs], dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.lower = np.where(self.log, np.log(np.where(lo > 0, lo, 0.0)), lo)
            self.upper = np.where(self.log, np.log(hi), hi)
        self.lower = np.nan_to_num(self.lower, nan=-np.inf)
        self.max_simulations = max_simulations
        self.n_simulations = 0
        self.t0 = time.perf_counter()
        self._cache: dict = {}

    # ---------------------------------------------------------------- mapping
    def to_x(self, p) -> np.ndarray:
        v = np.asarray(p, dtype=float)[self.free]
        if np.any(v[self.log] <= 0):
            raise ValueError("log-space parameters must be positive")
        return np.where(self.log, np.log(np.where(self.log, v, 1.0)), v)

    def to_p(self, x) -> np.ndarray:
        p = self.p0.copy()
        p[self.free] = np.where(self.log, np.exp(np.where(self.log, x, 0.0)), x)
        return p

    def project(self, x) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def with_stiffness(self, k_n: float) -> "OptimizationProblem":
        """Copy of the problem with contact stiffness ``k_n`` (fresh counters)."""
        sysm = copy.copy(self.system)
        sysm.contact = dataclasses.replace(self.system.contact, k_n=float(k_n))
        new = copy.copy(self)
        new.system = sysm
        new.n_simulations = 0
        new._cache = {}
        return new

    def param_names(self) -> list[str]:
        return [self.system.param_names[j] for j in self.free]

    # ---------------------------------------------------------------- evaluation
    def _run(self, x, keep_products=True):
        if self.max_simulations is not None and self.n_simulations >= self.max_simulations:
            raise BudgetExhausted()
        self.n_simulations += 1
        p = self.to_p(x)
        try:
            traj = simulate(self.system, self.integrator, p, self.n_steps, self.solver,
                            keep_products=keep_products)
        except (NonConvergence, InvertedElementError, AssemblyError) as exc:
            log.info("trial point rejected: %s", exc)
            raise TrialFailed(str(exc)) from exc
        return traj, p

    def _chain(self, g_full, x):
        g = g_full[self.free].copy()
        g[self.log] *= np.exp(x[self.log])
        return g

    def value_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        key = ("g", x.tobytes())
        if key in self._cache:
            return self._cache[key]
        traj, p = self._run(x)
        phi, dq, dp = self.objective.evaluate(traj, p)
        g = self._chain(adjoint_sweep(traj, dq, dp).gradient, x)
        out = (float(phi), g)
        self._cache = {key: out}
        return out

    def residuals(self, x):
        """Least-squares residual and its Jacobian w.r.t. ``x`` (direct sensitivities)."""
        x = np.asarray(x, dtype=float)
        traj, p = self._run(x)
        S = sensitivity_sweep(traj)
        r, J = self.objective.least_squares(traj, p, S)
        J = J[:, self.free]
        J[:, self.log] *= np.exp(x[self.log])
        return r, J

    def simulate(self, x=None):
        x = self.to_x(self.p0) if x is None else x
        return simulate(self.system, self.integrator, self.to_p(x), self.n_steps, self.solver)


class FunctionProblem:
    """Analytic objective with the same interface as :class:`OptimizationProblem`.

    ``fun(x) -> (f, g)``; ``residual_fun(x) -> (r, J)`` enables Gauss-Newton.
    Each call counts as one simulation.
    """

    def __init__(self, fun, x0, lower=None, upper=None, residual_fun=None, max_simulations=None):
        self.fun = fun
        self.residual_fun = residual_fun
        self.p0 = np.array(x0, dtype=float)
        n = len(self.p0)
        self.lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
        self.upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
        self.max_simulations = max_simulations
        self.n_simulations = 0
        self.t0 = time.perf_counter()

    def to_x(self, p):
        return np.array(p, dtype=float)

    def to_p(self, x):
        return np.array(x, dtype=float)

    def project(self, x):
        return np.clip(x, self.lower, self.upper)

    def _count(self):
        if self.max_simulations is not None and self.n_simulations >= self.max_simulations:
            raise BudgetExhausted()
        self.n_simulations += 1

    def value_and_grad(self, x):
        self._count()
        f, g = self.fun(np.asarray(x, dtype=float))
        if not np.isfinite(f):
            raise TrialFailed("non-finite objective")
        return float(f), np.asarray(g, dtype=float)

    def residuals(self, x):
        self._count()
        return self.residual_fun(np.asarray(x, dtype=float))


# --------------------------------------------------------------------------- helpers
class _Recorder:
    def __init__(self, problem: OptimizationProblem):
        self.problem = problem
        self.history: list = []

    def add(self, it, phi, g, x):
        self.history.append({
            "iteration": it,
            "phi": float(phi),
            "grad_norm": float(np.linalg.norm(g)) if g is not None else None,
            "parameters": [float(v) for v in self.problem.to_p(x)],
            "simulations": self.problem.n_simulations,
            "wall_time": time.perf_counter() - self.problem.t0,
        })


def _projected_gradient(problem, x, g):
    return x - problem.project(x - g)


def _max_step(problem, x, d):
    """Largest ``a`` with ``x + a d`` inside the bounds."""
    a = np.inf
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        up = np.where(d > 0, (problem.upper - x) / d, np.inf)
        lo = np.where(d < 0, (problem.lower - x) / d, np.inf)
    a = float(min(np.min(up, initial=np.inf), np.min(lo, initial=np.inf)))
    return max(a, 0.0)


def _strong_wolfe(fg, x, d, f0, g0, a1, amax, c1=1e-4, c2=0.9, max_evals=20):
    """Strong-Wolfe bracketing/zoom along ``d``.

    Trial failures shrink the step towards the last good one.  Returns
    ``(a, f, g)`` of the best sufficient-decrease point found, or ``None``.
    """
    d0 = float(g0 @ d)
    best = None
    evals = 0

    def phi(a):
        nonlocal evals, best
        evals += 1
        f, g = fg(x + a * d)
        if f <= f0 + c1 * a * d0 and (best is None or f < best[1]):
            best = (a, f, g)
        return f, g, float(g @ d)

    def zoom(lo, hi, flo):
        while evals < max_evals:
            a = 0.5 * (lo + hi)
            try:
                f, g, dd = phi(a)
            except TrialFailed:
                hi = a
                continue
            if f > f0 + c1 * a * d0 or f >= flo:
                hi = a
            else:
                if abs(dd) <= -c2 * d0:
                    return a, f, g
                if dd * (hi - lo) >= 0:
                    hi = lo
                lo, flo = a, f
            if abs(hi - lo) < 1e-12 * max(1.0, abs(lo)):
                break
        return best

    a_prev, f_prev = 0.0, f0
    a = min(a1, amax)
    first = True
    while evals < max_evals:
        try:
            f, g, dd = phi(a)
        except TrialFailed:
            a = a_prev + 0.5 * (a - a_prev)
            if a - a_prev < 1e-14:
                break
            continue
        if f > f0 + c1 * a * d0 or (not first and f >= f_prev):
            return zoom(a_prev, a, f_prev)
        if abs(dd) <= -c2 * d0:
            return a, f, g
        if dd >= 0:
            return zoom(a, a_prev, f)
        if a >= amax:
            return a, f, g
        a_prev, f_prev, first = a, f, False
        a = min(2.0 * a, amax)
    return best


# --------------------------------------------------------------------------- drivers
def minimize(problem: OptimizationProblem, x0=None, config: OptimizerConfig | None = None) -> OptimizeResult:
    """Run the configured optimizer from ``x0`` (default: the problem's ``p0``)."""
    config = config or OptimizerConfig()
    if config.max_simulations is not None:
        problem.max_simulations = problem.n_simulations + config.max_simulations
    x0 = problem.project(problem.to_x(problem.p0) if x0 is None else np.asarray(x0, dtype=float))
    driver = {"lbfgs": _lbfgs, "adam": _adam, "gauss-newton": _gauss_newton}[config.method]
    return driver(problem, x0, config)


def _start(problem, x0):
    try:
        return problem.value_and_grad(x0)
    except (TrialFailed, BudgetExhausted) as exc:
        raise OptimizerAbort(f"initial point cannot be evaluated: {exc}") from exc


def _result(problem, x, f, f0, rec, status):
    return OptimizeResult(p=problem.to_p(x), phi=float(f), phi0=float(f0), history=rec.history,
                          n_simulations=problem.n_simulations, status=status)


def _lbfgs(problem, x0, config):
    rec = _Recorder(problem)
    x = x0
    f, g = _start(problem, x)
    f0 = f
    rec.add(0, f, g, x)
    S, Y = [], []
    status = "max_iterations"
    resets = 0
    for it in range(1, config.max_iterations + 1):
        pg = _projected_gradient(problem, x, g)
        if np.linalg.norm(pg) <= config.gtol or f <= config.phi_target:
            status = "converged"
            break
        # variables pinned at a bound with the gradient pushing outwards stay fixed
        active = ((x <= problem.lower) & (g > 0)) | ((x >= problem.upper) & (g < 0))
        free = ~active
        q = np.where(free, g, 0.0)
        alphas = []
        for s, y in reversed(list(zip(S, Y))):
            rho = 1.0 / float(y @ s)
            a = rho * float(s @ q)
            alphas.append((a, rho, s, y))
            q = q - a * y
        if S:
            gamma = float(S[-1] @ Y[-1]) / float(Y[-1] @ Y[-1])
        else:
            gn = np.linalg.norm(q)
            gamma = (config.initial_step or 1.0) / gn if gn > 0 else 1.0
        r = gamma * q
        for a, rho, s, y in reversed(alphas):
            b = rho * float(y @ r)
            r = r + (a - b) * s
        d = np.where(free, -r, 0.0)
        if float(d @ g) >= 0:
            d = -np.where(free, g, 0.0)
            S, Y = [], []
        amax = _max_step(problem, x, d)
        if amax <= 0:
            status = "converged"
            break
        try:
            found = _strong_wolfe(problem.value_and_grad, x, d, f, g, 1.0, amax)
        except BudgetExhausted:
            status = "budget"
            break
        if found is None:
            if S and resets < 2:
                S, Y = [], []
                resets += 1
                continue
            status = "line_search_failed"
            break
        resets = 0
        a, f_new, g_new = found
        x_new = problem.project(x + a * d)
        s, y = x_new - x, g_new - g
        if float(s @ y) > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            S.append(s)
            Y.append(y)
            if len(S) > config.memory:
                S.pop(0)
                Y.pop(0)
        decrease = f - f_new
        x, f, g = x_new, f_new, g_new
        rec.add(it, f, g, x)
        if decrease <= config.ftol * max(abs(f), 1e-300):
            status = "converged"
            break
    return _result(problem, x, f, f0, rec, status)


def _adam(problem, x0, config, iterations=None):
    rec = _Recorder(problem)
    x = x0
    f, g = _start(problem, x)
    f0 = f
    best = (f, x.copy(), g)
    rec.add(0, f, g, x)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2 = config.adam_beta1, config.adam_beta2
    n_it = config.max_iterations if iterations is None else iterations
    status = "max_iterations"
    failures = 0
    lr = config.adam_lr
    t = 0
    while t < n_it:
        if np.linalg.norm(_projected_gradient(problem, x, g)) <= config.gtol or f <= config.phi_target:
            status = "converged"
            break
        t += 1
        m_t = b1 * m + (1 - b1) * g
        v_t = b2 * v + (1 - b2) * g * g
        step = lr * (m_t / (1 - b1 ** t)) / (np.sqrt(v_t / (1 - b2 ** t)) + config.adam_eps)
        try:
            f_new, g_new = problem.value_and_grad(problem.project(x - step))
        except BudgetExhausted:
            status = "budget"
            break
        except TrialFailed:
            failures += 1
            if failures > config.max_failures:
                raise OptimizerAbort("too many failed simulations", rec.history)
            lr *= 0.5
            t -= 1
            continue
        m, v = m_t, v_t
        x, f, g = problem.project(x - step), f_new, g_new
        rec.add(t, f, g, x)
        if f < best[0]:
            best = (f, x.copy(), g)
    f, x, g = best
    return _result(problem, x, f, f0, rec, status)


def _gauss_newton(problem, x0, config):
    rec = _Recorder(problem)
    try:
        r, J = problem.residuals(x0)
    except (TrialFailed, BudgetExhausted) as exc:
        raise OptimizerAbort(f"initial point cannot be evaluated: {exc}") from exc
    x = x0
    f = float(r @ r)
    f0 = f
    rec.add(0, f, 2 * J.T @ r, x)
    lam = config.lm_damping
    status = "max_iterations"
    failures = 0
    for it in range(1, config.max_iterations + 1):
        g = J.T @ r
        if np.linalg.norm(_projected_gradient(problem, x, 2 * g)) <= config.gtol or f <= config.phi_target:
            status = "converged"
            break
        A = J.T @ J
        D = np.diag(np.maximum(np.diag(A), 1e-12))
        while True:
            dx = np.linalg.solve(A + lam * D, -g)
            x_new = problem.project(x + dx)
            try:
                r_new, J_new = problem.residuals(x_new)
                f_new = float(r_new @ r_new)
            except BudgetExhausted:
                return _result(problem, x, f, f0, rec, "budget")
            except TrialFailed:
                failures += 1
                if failures > config.max_failures:
                    raise OptimizerAbort("too many failed simulations", rec.history)
                f_new = np.inf
            if f_new < f:
                lam = max(lam / 3.0, 1e-12)
                break
            lam *= 4.0
            if lam > 1e12:
                return _result(problem, x, f, f0, rec, "converged")
        decrease = f - f_new
        x, r, J, f = x_new, r_new, J_new, f_new
        rec.add(it, f, 2 * J.T @ r, x)
        if decrease <= config.ftol * max(f, 1e-300):
            status = "converged"
            break
    return _result(problem, x, f, f0, rec, status)


# --------------------------------------------------------------------------- continuation
def continuation(problem: OptimizationProblem, schedule=CONTINUATION_SCHEDULE,
                 config: OptimizerConfig | None = None, x0=None) -> OptimizeResult:
    """Minimize at each contact stiffness in turn, warm-starting every stage.

    The simulation budget in ``config`` applies per stage.
    """
    config = config or OptimizerConfig()
    x = problem.project(problem.to_x(problem.p0) if x0 is None else np.asarray(x0, dtype=float))
    history, stages = [], []
    total = 0
    phi0 = None
    res = None
    for k_n in schedule:
        stage = problem.with_stiffness(k_n)
        res = minimize(stage, x, config)
        total += stage.n_simulations
        x = stage.to_x(res.p)
        if phi0 is None:
            phi0 = res.phi0
        for h in res.history:
            history.append(dict(h, k_n=float(k_n), simulations=h["simulations"] + total - stage.n_simulations))
        stages.append({"k_n": float(k_n), "phi_start": res.phi0, "phi_end": res.phi,
                       "simulations": stage.n_simulations, "status": res.status})
    return OptimizeResult(p=res.p, phi=res.phi, phi0=phi0, history=history, n_simulations=total,
                          status=res.status, stages=stages)


# --------------------------------------------------------------------------- staged estimation
def _first_contact_step(markers, obstacles, margin):
    """First stored step at which any marker is within ``margin`` of an obstacle."""
    for s in range(1, markers.shape[0]):
        for x in markers[s]:
            if np.any(np.isnan(x)):
                continue
            for ob in obstacles:
                if ob.gap(x)[0] < margin:
                    return s
    return markers.shape[0]


def staged_estimation(system: MultiBodySystem, integrator: Integrator, features, markers,
                      ic_params, material_params, p0=None, ballistic_steps: int | None = None,
                      bounce_steps: int | None = None, contact_margin: float = 0.0,
                      adam_iterations: int = 75, adam_lr: float = 0.05,
                      config: OptimizerConfig | None = None, solver: SolverConfig | None = None) -> OptimizeResult:
    """Three-phase fit of initial conditions and material parameters to markers.

    1. initial conditions on the ballistic window (steps before first contact),
    2. material parameters on the window up to the end of the first bounce,
       with an optional short ADAM run before L-BFGS,
    3. everything on the full recording.

    ``ballistic_steps`` defaults to the last step before a marker comes
    within ``contact_margin`` of an obstacle; ``bounce_steps`` defaults to
    the step where contact forces vanish again in the phase-1 fit.
    """
    config = config or OptimizerConfig()
    markers = np.asarray(markers, dtype=float)
    n_total = markers.shape[0] - 1
    if not system.finalized:
        system.finalize(integrator.dt)
    p = system.get_parameters() if p0 is None else np.array(p0, dtype=float)
    if ballistic_steps is None:
        ballistic_steps = max(_first_contact_step(markers, system.obstacles, contact_margin) - 1, 1)
    stages, history = [], []
    total = 0
    phi0 = None

    def phase(name, free, n_steps, method, x_config):
        nonlocal p, total, phi0
        obj = Objective([TrajectoryMatch(features, markers, steps=(1, n_steps))])
        prob = OptimizationProblem(system, integrator, obj, n_steps, free=free, p0=p, solver=solver)
        res = minimize(prob, None, dataclasses.replace(x_config, method=method))
        p = res.p
        total += prob.n_simulations
        if phi0 is None:
            phi0 = res.phi0
        for h in res.history:
            history.append(dict(h, phase=name, simulations=h["simulations"] + total - prob.n_simulations))
        stages.append({"phase": name, "steps": n_steps, "phi_start": res.phi0, "phi_end": res.phi,
                       "simulations": prob.n_simulations, "status": res.status})
        return prob, res

    prob, _ = phase("initial_conditions", ic_params, ballistic_steps, "lbfgs", config)
    if bounce_steps is None:
        traj = simulate(system, integrator, p, n_total, solver, keep_products=False)
        touched = [i for i, inf in enumerate(traj.info, start=1) if np.any(inf.fn > 0)]
        bounce_steps = n_total
        if touched:
            after = [i for i, inf in enumerate(traj.info, start=1) if i > touched[0] and not np.any(inf.fn > 0)]
            bounce_steps = after[0] if after else n_total
    if adam_iterations > 0:
        adam_cfg = dataclasses.replace(config, adam_lr=adam_lr, max_iterations=adam_iterations,
                                       max_simulations=adam_iterations + 1)
        phase("materials_adam", material_params, bounce_steps, "adam", adam_cfg)
    phase("materials", material_params, bounce_steps, "lbfgs", config)
    _, res = phase("all", list(ic_params) + list(material_params), n_total, "lbfgs", config)
    return OptimizeResult(p=p, phi=res.phi, phi0=phi0, history=history, n_simulations=total,
                          status=res.status, stages=stages)


# --------------------------------------------------------------------------- landscapes
def _landscape_cell(args):
    problem, x = args
    try:
        return problem.value_and_grad(x)
    except TrialFailed:
        return np.nan, np.full(len(x), np.nan)


def sample_landscape(problem: OptimizationProblem, lower, upper, resolution=(21, 21), threads: int = 1):
    """Objective and gradient on a regular grid over two free parameters.

    ``problem`` must have exactly two free parameters.  Returns a list of
    ``(p1, p2, phi, g1, g2)`` rows in row-major order (p2 fastest) and the
    ``(n1, n2)`` array of ``phi``.
    """
    if len(problem.free) != 2:
        raise ValueError("landscapes need exactly two free parameters")
    problem.max_simulations = None
    a = np.linspace(lower[0], upper[0], resolution[0])
    b = np.linspace(lower[1], upper[1], resolution[1])
    cells = []
    for u in a:
        for w in b:
            p = problem.p0.copy()
            p[problem.free] = (u, w)
            cells.append((problem, problem.to_x(p)))
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_landscape_cell, cells))
    else:
        results = [_landscape_cell(c) for c in cells]
    rows = []
    for (_, x), (phi, g) in zip(cells, results):
        pv = problem.to_p(x)[problem.free]
        # report gradients w.r.t. the parameters themselves, not log-space
        gp = np.where(problem.log, g / np.where(problem.log, pv, 1.0), g)
        rows.append((float(pv[0]), float(pv[1]), float(phi), float(gp[0]), float(gp[1])))
    grid = np.array([r[2] for r in rows]).reshape(resolution)
    return rows, grid


def grid_local_minima(grid: np.ndarray) -> list[tuple[int, int]]:
    """Cells strictly below all their (up to 8) finite neighbours."""
    out = []
    n1, n2 = grid.shape
    for i in range(n1):
        for j in range(n2):
            v = grid[i, j]
            if not np.isfinite(v):
                continue
            nb = grid[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2]
            others = [x for (ii, jj), x in np.ndenumerate(nb)
                      if (ii + max(i - 1, 0), jj + max(j - 1, 0)) != (i, j) and np.isfinite(x)]
            if others and v < min(others):
                out.append((i, j))
    return out
