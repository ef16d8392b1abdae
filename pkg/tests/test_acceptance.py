"""Acceptance suite.

Each test checks one acceptance criterion at its stated tolerance and
records a single PASS/FAIL line (collected in the pytest terminal summary).
The suite is slow (tens of minutes on one core); run it alone with
``pytest tests/test_acceptance.py -v``.
"""

import math
import time

import numpy as np
import pytest
from scipy.signal import find_peaks

from diffcontact import meshes
from diffcontact.integrator import Integrator, simulate
from diffcontact.objectives import Feature, Objective, TerminalPointTarget
from diffcontact.optimize import (OptimizationProblem, OptimizerConfig, continuation, grid_local_minima,
                                  minimize, sample_landscape, staged_estimation)
from diffcontact.presets import PRESETS, get_preset
from diffcontact.rigid import restitution_ratio, simulate_rebound
from diffcontact.sensitivity import adjoint_sweep, direct_gradient, gradient_check
from diffcontact.soft import SoftBody
from diffcontact.system import MultiBodySystem

pytestmark = pytest.mark.slow
EPS = np.finfo(float).eps


# --------------------------------------------------------------------------- shared runs
_PRESET_RUNS = {}


def preset_run(name):
    """Simulation of a preset with its objective (or a fixed linear functional)."""
    if name not in _PRESET_RUNS:
        scene = get_preset(name)
        system = scene.build_system()
        integ = scene.build_integrator()
        p = scene.initial_parameters(system)
        traj = simulate(system, integ, p, scene.integrator.steps, scene.build_solver())
        if scene.objective is not None:
            markers = scene.synthetic_markers(system) if scene.needs_markers() else None
            phi, dq, dp = scene.build_objective(system, markers).evaluate(traj, p)
        else:
            w = np.random.default_rng(7).normal(size=(traj.n_steps + 1, system.ndof))
            phi, dq, dp = float(np.sum(w * traj.q)), w, np.zeros(len(p))
        _PRESET_RUNS[name] = (scene, system, traj, p, dq, dp)
    return _PRESET_RUNS[name]


def staged_errors(noise, seed=0, variant="linear"):
    """Staged real2sim fit from synthetic markers; returns parameter errors."""
    scene = get_preset("synthetic-real2sim", noise=noise, variant=variant).model_copy(update={"seed": seed})
    system = scene.build_system()
    markers = scene.synthetic_markers(system)
    opt = scene.optimization
    st = opt.staged
    res = staged_estimation(system, scene.build_integrator(), scene.marker_features(), markers,
                            st.initial_conditions, st.materials, scene.initial_parameters(system),
                            st.ballistic_steps, st.bounce_steps, adam_iterations=st.adam_iterations,
                            adam_lr=st.adam_lr, config=opt.config(), solver=scene.build_solver())
    truth = scene.truth_parameters(system)
    err = np.abs(res.p - truth)
    idx = {n: j for j, n in enumerate(system.param_names)}
    pos = [idx[f"ball.init_position[{i}]"] for i in range(3)]
    vel = [idx[f"ball.init_velocity[{i}]"] for i in range(3)]
    E, cf = idx["ball.youngs[0]"], idx["ground.friction[0]"]
    return {"E": err[E] / truth[E], "cf": err[cf] / truth[cf],
            "position": float(err[pos].max()), "velocity": float(err[vel].max())}


# --------------------------------------------------------------------------- criteria
def test_restitution_matches_analytic(verdict):
    t0 = time.perf_counter()
    errs = {}
    for kd in (0.0, 10.0, 40.0):
        e_sim = simulate_rebound(1000.0, kd, m=1.0, dt=1e-5)
        errs[kd] = abs(e_sim / restitution_ratio(1000.0, kd, 1.0) - 1.0)
    elapsed = time.perf_counter() - t0
    ok = max(errs.values()) < 0.01 and elapsed < 1.0
    verdict("restitution", ok, "rel errors " + ", ".join(f"k_d={k:g}: {v:.2e}" for k, v in errs.items())
            + f" (limit 1e-2); runtime {elapsed:.2f} s (limit 1 s)")


def _tori_objective():
    return Objective([TerminalPointTarget(Feature("torus_a"), [0.2, -0.1, 0.05]),
                      TerminalPointTarget(Feature("torus_b"), [0.2, 0.1, 0.05])])


def test_adjoint_gradients_match_finite_differences(verdict):
    results = {}
    # throw-to-point: all launch velocity components
    scene = get_preset("throw-to-point")
    system = scene.build_system()
    results["throw-to-point"] = gradient_check(system, scene.build_integrator(), scene.build_objective(system),
                                               scene.initial_parameters(system), scene.integrator.steps,
                                               config=scene.build_solver())
    # tori-drop: material parameters only
    scene = get_preset("tori-drop")
    system = scene.build_system()
    material = [j for j, n in enumerate(system.param_names)
                if n.split(".")[1].startswith(("youngs", "viscosity", "density"))]
    results["tori-drop"] = gradient_check(system, scene.build_integrator(), _tori_objective(),
                                          scene.initial_parameters(system), scene.integrator.steps,
                                          config=scene.build_solver(), indices=material)
    # hopper-trajopt: control knots of the per-step motor targets
    scene = get_preset("hopper-trajopt")
    system = scene.build_system()
    results["hopper-trajopt"] = gradient_check(system, scene.build_integrator(), scene.build_objective(system),
                                               scene.initial_parameters(system), scene.integrator.steps,
                                               config=scene.build_solver())
    worst = max(r["max_rel_error"] for r in results.values())
    checked = {k: sum(kd in ("central", "forward", "backward") for kd in r["kind"]) for k, r in results.items()}
    excluded = {k: len(r["excluded"]) for k, r in results.items()}
    verdict("adjoint vs finite differences", worst < 1e-4 and all(checked.values()),
            ", ".join(f"{k}: {r['max_rel_error']:.2e} over {checked[k]} components ({excluded[k]} excluded)"
                      for k, r in results.items()) + " (limit 1e-4)")


def test_adjoint_equals_direct_on_presets(verdict):
    worst = {}
    for name in PRESETS:
        _, _, traj, _, dq, dp = preset_run(name)
        ga = adjoint_sweep(traj, dq, dp).gradient
        gd = direct_gradient(traj, dq, dp)
        worst[name] = float(np.max(np.abs(ga - gd)) / max(np.max(np.abs(ga)), 1e-300))
    verdict("adjoint equals direct", max(worst.values()) <= 1e-10,
            f"max relative difference {max(worst.values()):.2e} over {len(worst)} presets (limit 1e-10)")


def test_coulomb_limit_on_presets(verdict):
    viol, stick_disp, n_stuck = -np.inf, 0.0, 0
    for name in PRESETS:
        _, system, traj, _, _, _ = preset_run(name)
        for i, info in enumerate(traj.info, start=1):
            viol = max(viol, info.coulomb_violation)
            for cid in info.stuck:
                obstacle = system.obstacles[system.contact_table[cid]["obstacle"]]
                x0 = system.contact_position(traj.q[i - 1], cid)
                d = system.contact_position(traj.q[i], cid) - x0
                n = obstacle.gap(x0)[1][0]
                stick_disp = max(stick_disp, float(np.linalg.norm(d - (d @ n) * n)))
                n_stuck += 1
    ok = viol <= 1e-9 and n_stuck > 0 and stick_disp == 0.0
    verdict("Coulomb limit", ok, f"max |f_t| - c_f f_n = {viol:.2e} (limit 1e-9); "
            f"max tangential displacement of {n_stuck} stuck node-steps = {stick_disp:.2e} (must be exactly 0)")


def _tangential(name, variant):
    scene = get_preset(name, variant=variant)
    traj = simulate(scene.build_system(), scene.build_integrator(), None, scene.integrator.steps,
                    scene.build_solver(), keep_products=False)
    n = len(traj.states)
    x = traj.q.reshape(n, -1, 3)
    v = traj.qd.reshape(n, -1, 3)
    # the incline is expressed through tilted gravity; the ground plane is z = 0
    speed = np.linalg.norm(v[:, :, :2], axis=2).mean(axis=1)
    disp = np.linalg.norm(np.diff(x[:, :, :2], axis=0), axis=2).mean(axis=1)
    return speed, disp


def test_static_friction_fidelity(verdict):
    settled = slice(60, None)  # the second half of the two-second run
    h_speed, h_disp = _tangential("cylinder-drop", "hybrid")
    l_speed, _ = _tangential("cylinder-drop", "linear")
    hybrid_disp = float(h_disp[59:].max())
    slip = float(np.median(l_speed[settled]))
    ok = hybrid_disp <= EPS and 1e-4 <= slip <= 1e-2
    verdict("static friction", ok,
            f"hybrid max mean tangential displacement per settled step {hybrid_disp:.2e} m (limit {EPS:.2e}), "
            f"speed {h_speed[settled].max():.2e} m/s; linear residual slip {slip:.2e} m/s (band 1e-4..1e-2)")


def test_viscosity_preserves_momentum(verdict):
    n, t = meshes.torus(0.08, 0.03, 8, 4)
    body = SoftBody(n, t, youngs=2e4, poisson=0.3, viscosity=0.1, density=300.0, name="torus",
                    position=[0, 0, 0.5], velocity=[0.3, 0.1, -0.2], spin=[1.0, 0.5, 0.2])
    system = MultiBodySystem([body], [], gravity=[0, 0, 0])
    traj = simulate(system, Integrator("BDF2", 1e-3), None, 1000, keep_products=False)
    m = body.lumped_mass().reshape(-1, 3)[:, :1]
    x = traj.q.reshape(len(traj.states), -1, 3)
    v = traj.qd.reshape(len(traj.states), -1, 3)
    P = (m * v).sum(axis=1)
    L = (m * np.cross(x, v)).sum(axis=1)
    dP = float(np.abs(P - P[0]).max() / np.linalg.norm(P[0]))
    dL = float(np.abs(L - L[0]).max() / np.linalg.norm(L[0]))
    verdict("momentum conservation", dP <= 1e-6 and dL <= 1e-6,
            f"linear {dP:.2e}, angular {dL:.2e} relative over 1 s at dt=1e-3 (limit 1e-6)")


def test_bouncing_cube_restitution(verdict):
    scene = get_preset("bouncing-cubes")
    system = scene.build_system()
    traj = simulate(system, scene.build_integrator(), None, scene.integrator.steps, scene.build_solver(),
                    keep_products=False)
    rest = traj.q[-1][system.offsets[-1] + 2]  # the most damped cube has settled
    restitution, apexes = [], []
    for o in system.offsets:
        z = traj.q[:, o + 2]
        peaks, _ = find_peaks(z)
        apexes.append(z[peaks])
        restitution.append(math.sqrt((z[peaks[0]] - rest) / (z[0] - rest)))
    undamped = apexes[0]
    monotone = all(a > b for a, b in zip(restitution, restitution[1:]))
    slow = restitution[0] >= 0.7 and bool(np.all(np.diff(undamped) <= 0))
    verdict("bouncing cubes", monotone and slow,
            "restitution for k_d = " + ", ".join(f"{kd:g}: {e:.3f}" for kd, e in
                                                  zip((b.damping for b in system.bodies), restitution))
            + f"; undamped apexes non-increasing over {len(undamped)} bounces, first restitution >= 0.7")


def test_inverse_throw(verdict):
    t0 = time.perf_counter()
    scene = get_preset("throw-to-point")
    system = scene.build_system()
    problem = OptimizationProblem(system, scene.build_integrator(), scene.build_objective(system),
                                  scene.integrator.steps, p0=scene.initial_parameters(system),
                                  solver=scene.build_solver())
    res = minimize(problem, config=OptimizerConfig(method="lbfgs", max_simulations=100))
    elapsed = time.perf_counter() - t0
    ratio = res.phi / res.phi0
    verdict("inverse throw", ratio < 1e-6 and res.n_simulations <= 100 and elapsed < 600,
            f"phi/phi0 = {ratio:.2e} (limit 1e-6) in {res.n_simulations} simulations (limit 100), {elapsed:.1f} s")


NOISE_LEVELS = (0.0, 1e-3, 3e-3, 1e-2)
NOISE_SEEDS = (0, 1, 2)
TOLERANCES = {"E": 0.05, "cf": 0.05, "position": 1e-3, "velocity": 1e-2}


def test_synthetic_real2sim(verdict):
    clean = {v: staged_errors(0.0, variant=v) for v in ("linear", "tanh")}
    clean_ok = all(e[k] <= TOLERANCES[k] for e in clean.values() for k in TOLERANCES)
    # aggregate error of one run: worst parameter group relative to its tolerance
    medians = []
    for level in NOISE_LEVELS:
        runs = [clean["linear"]] if level == 0 else [staged_errors(level, seed) for seed in NOISE_SEEDS]
        medians.append(float(np.median([max(e[k] / TOLERANCES[k] for k in TOLERANCES) for e in runs])))
    monotone = all(a <= b for a, b in zip(medians, medians[1:]))
    detail = "; ".join(f"{v}: E {e['E']:.1e}, c_f {e['cf']:.1e}, x0 {e['position']:.1e} m, "
                       f"v0 {e['velocity']:.1e} m/s" for v, e in clean.items())
    verdict("synthetic real2sim", clean_ok and monotone,
            f"zero noise {detail} (limits 5%, 5%, 1e-3, 1e-2); median normalized error vs noise "
            + ", ".join(f"{lv:g}: {m:.2f}" for lv, m in zip(NOISE_LEVELS, medians)) + " (must be non-decreasing)")


def test_continuation_benefit(verdict):
    scene = get_preset("upright-throw")
    system = scene.build_system()
    problem = OptimizationProblem(system, scene.build_integrator(), scene.build_objective(system),
                                  scene.integrator.steps, p0=scene.initial_parameters(system),
                                  solver=scene.build_solver())
    schedule = (100.0, 200.0, 400.0, 800.0, 1000.0)
    per_stage = 60
    cont = continuation(problem, schedule, OptimizerConfig(max_simulations=per_stage))
    direct = minimize(problem.with_stiffness(1000.0),
                      config=OptimizerConfig(max_simulations=per_stage * len(schedule)))
    verdict("continuation", cont.phi <= direct.phi,
            f"continuation phi {cont.phi:.3e} ({cont.n_simulations} simulations) vs direct at k_n=1e3 "
            f"phi {direct.phi:.3e} ({direct.n_simulations} simulations, {direct.status})")


def test_landscape_has_two_basins(verdict):
    scene = get_preset("throw-to-point")
    system = scene.build_system()
    ls = scene.landscape
    problem = OptimizationProblem(system, scene.build_integrator(), scene.build_objective(system),
                                  scene.integrator.steps, free=list(ls.params),
                                  p0=scene.initial_parameters(system), solver=scene.build_solver())
    rows, grid = sample_landscape(problem, ls.lower, ls.upper, ls.resolution)
    minima = grid_local_minima(grid)
    n2 = ls.resolution[1]
    where = ", ".join(f"({rows[i * n2 + j][0]:.2f}, {rows[i * n2 + j][1]:.2f})" for i, j in minima)
    verdict("landscape basins", len(minima) >= 2,
            f"{len(minima)} separated local minima on a {grid.shape[0]}x{grid.shape[1]} grid at (v_x, v_z) = {where}")


def test_hopper_regression(verdict):
    scene = get_preset("hopper-trajopt")
    system = scene.build_system()
    problem = OptimizationProblem(system, scene.build_integrator(), scene.build_objective(system),
                                  scene.integrator.steps, p0=scene.initial_parameters(system),
                                  solver=scene.build_solver())
    res = minimize(problem, config=scene.optimization.config())
    decrease = 1.0 - res.phi / res.phi0
    verdict("hopper regression", decrease >= 0.5,
            f"objective decreased by {100 * decrease:.1f}% from nominal controls (limit 50%) "
            f"in {res.n_simulations} simulations")
