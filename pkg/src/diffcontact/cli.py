"""Command-line front end: simulate, grad-check, optimize, landscape, presets.

Exit codes: 0 ok, 2 scene/schema error, 3 simulation did not converge,
4 optimizer abort.  Set ``ADD_LOG`` (``debug``, ``info``, ``warning`` or a
number) to control log verbosity.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .integrator import NonConvergence, simulate
from .optimize import (OptimizationProblem, OptimizerAbort, continuation, grid_local_minima,
                       minimize, sample_landscape, staged_estimation)
from .presets import PRESETS, get_preset
from .scene import Scene, SceneError, dump_scene, load_scene, scene_from_dict
from .sensitivity import gradient_check

log = logging.getLogger("diffcontact")

EXIT_OK, EXIT_SCHEMA, EXIT_NONCONVERGENCE, EXIT_ABORT = 0, 2, 3, 4


def _configure_logging():
    level = os.environ.get("ADD_LOG", "warning").strip().lower()
    if level.isdigit():
        lvl = {0: logging.WARNING, 1: logging.INFO}.get(int(level), logging.DEBUG)
    else:
        lvl = getattr(logging, level.upper(), logging.WARNING)
    logging.basicConfig(level=lvl, format="%(levelname)s %(name)s: %(message)s")


# --------------------------------------------------------------------------- scene handling
def _load(args) -> tuple[Scene, Path | None]:
    if args.preset:
        scene, base = get_preset(args.preset), None
    elif args.scene:
        scene, base = load_scene(args.scene), Path(args.scene).resolve().parent
    else:
        raise SceneError([("arguments", "one of --scene or --preset is required")])
    data = scene.model_dump(mode="json")
    if args.contact is not None:
        data["contact"]["variant"] = args.contact
    if args.kn is not None:
        data["contact"]["k_n"] = args.kn
    if args.dt is not None:
        data["integrator"]["dt"] = args.dt
    if args.steps is not None:
        data["integrator"]["steps"] = args.steps
    if args.seed is not None:
        data["seed"] = args.seed
    return scene_from_dict(data), base


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data):
    path.write_text(json.dumps(data, indent=2, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not serializable: {type(v)}")


# --------------------------------------------------------------------------- commands
def cmd_simulate(args) -> int:
    scene, base = _load(args)
    system = scene.build_system(base)
    integrator = scene.build_integrator()
    n_t = scene.integrator.steps
    out = _out_dir(args)
    width = max((b.ndof for b in system.bodies), default=0)
    header = ["step", "time", "body"] + [f"dof{i}" for i in range(width)]
    energy_cols = ["kinetic", "elastic", "gravity", "coupling", "contact", "total"]
    t0 = time.perf_counter()
    if system.ndof == 0:
        times = np.arange(n_t + 1) * integrator.dt
        qs = vs = np.zeros((n_t + 1, 0))
        info = []
    else:
        traj = simulate(system, integrator, None, n_t, scene.build_solver(), keep_products=False)
        times, qs, vs, info = traj.times, traj.q, traj.qd, traj.info
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in range(n_t + 1):
            if not system.bodies:
                w.writerow([s, repr(float(times[s])), ""])
            for b, o in zip(system.bodies, system.offsets):
                w.writerow([s, repr(float(times[s])), b.name] + [repr(float(x)) for x in qs[s, o:o + b.ndof]])
    with open(out / "energy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time"] + energy_cols)
        for s in range(n_t + 1):
            e = system.energy(qs[s], vs[s]) if system.ndof else dict.fromkeys(energy_cols, 0.0)
            w.writerow([s, repr(float(times[s]))] + [repr(float(e[k])) for k in energy_cols])
    viol = [i.coulomb_violation for i in info if len(i.fn)]
    summary = {
        "scene": scene.name,
        "steps": n_t,
        "dt": integrator.dt,
        "wall_time": time.perf_counter() - t0,
        "newton_iterations": [len(i.newton_trace) - 1 for i in info],
        "max_coulomb_violation": max(viol) if viol else None,
        "hybrid_fallbacks": sum(bool(i.fallback) for i in info),
    }
    _write_json(out / "simulate.json", summary)
    print(f"simulated {n_t} steps of {scene.name!r} -> {out}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    scene, base = _load(args)
    system = scene.build_system(base)
    markers = scene.synthetic_markers(system) if scene.needs_markers() else None
    objective = scene.build_objective(system, markers)
    p = scene.initial_parameters(system)
    rep = gradient_check(system, scene.build_integrator(), objective, p, scene.integrator.steps,
                         config=scene.build_solver())
    out = _out_dir(args)
    rows = []
    for j, name in enumerate(rep["names"]):
        rows.append({"parameter": name, "value": float(p[j]), "adjoint": float(rep["adjoint"][j]),
                     "fd": float(rep["fd"][j]), "rel_error": float(rep["rel_error"][j]), "kind": rep["kind"][j]})
    with open(out / "gradcheck.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["parameter"])
        w.writeheader()
        w.writerows(rows)
    _write_json(out / "gradcheck.json", {"scene": scene.name, "phi": rep["phi"],
                                         "max_rel_error": rep["max_rel_error"], "components": rows})
    print(f"max relative error {rep['max_rel_error']:.3e} over "
          f"{sum(r['kind'] != 'excluded' for r in rows)} components ({len(rep['excluded'])} excluded)")
    return EXIT_OK


def cmd_optimize(args) -> int:
    scene, base = _load(args)
    if scene.optimization is None:
        raise SceneError([("optimization", "scene has no optimization block")])
    opt = scene.optimization
    system = scene.build_system(base)
    integrator = scene.build_integrator()
    solver = scene.build_solver()
    config = opt.config()
    p0 = scene.initial_parameters(system)
    t0 = time.perf_counter()
    extra = {}
    if opt.staged is not None:
        st = opt.staged
        markers = scene.synthetic_markers(system)
        res = staged_estimation(system, integrator, scene.marker_features(), markers, st.initial_conditions,
                                st.materials, p0, st.ballistic_steps, st.bounce_steps,
                                adam_iterations=st.adam_iterations, adam_lr=st.adam_lr, config=config,
                                solver=solver)
        truth = scene.truth_parameters(system)
        extra["truth"] = {n: float(truth[j]) for j, n in enumerate(system.param_names) if n in st.truth}
        extra["abs_error"] = {n: float(abs(res.p[j] - truth[j]))
                              for j, n in enumerate(system.param_names) if n in st.truth}
        # undefined for zero truth values; use abs_error there
        extra["relative_error"] = {n: float(abs(res.p[j] - truth[j]) / abs(truth[j])) if truth[j] else None
                                   for j, n in enumerate(system.param_names) if n in st.truth}
    else:
        markers = scene.synthetic_markers(system) if scene.needs_markers() else None
        problem = OptimizationProblem(system, integrator, scene.build_objective(system, markers),
                                      scene.integrator.steps, free=opt.free, p0=p0, solver=solver)
        if opt.continuation:
            res = continuation(problem, opt.continuation, config)
        else:
            res = minimize(problem, None, config)
    report = {"scene": scene.name, "method": opt.method, "parameter_names": system.param_names,
              "initial_parameters": p0.tolist(), "wall_time": time.perf_counter() - t0}
    report.update(res.to_dict())
    report.update(extra)
    out = _out_dir(args)
    _write_json(out / "optimize.json", report)
    ratio = res.phi / res.phi0 if res.phi0 else 0.0
    print(f"{res.status}: phi {res.phi0:.6e} -> {res.phi:.6e} (ratio {ratio:.3e}) in {res.n_simulations} simulations")
    return EXIT_OK


def cmd_landscape(args) -> int:
    scene, base = _load(args)
    if scene.landscape is None:
        raise SceneError([("landscape", "scene has no landscape block")])
    ls = scene.landscape
    system = scene.build_system(base)
    markers = scene.synthetic_markers(system) if scene.needs_markers() else None
    problem = OptimizationProblem(system, scene.build_integrator(), scene.build_objective(system, markers),
                                  scene.integrator.steps, free=list(ls.params),
                                  p0=scene.initial_parameters(system), solver=scene.build_solver())
    rows, grid = sample_landscape(problem, ls.lower, ls.upper, ls.resolution, threads=args.threads)
    out = _out_dir(args)
    with open(out / "landscape.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p1", "p2", "phi", "g1", "g2"])
        w.writerows([[repr(v) for v in r] for r in rows])
    minima = grid_local_minima(grid)
    n2 = ls.resolution[1]
    _write_json(out / "landscape.json", {
        "scene": scene.name, "params": list(ls.params), "resolution": list(ls.resolution),
        "local_minima": [{"cell": [i, j], "p1": rows[i * n2 + j][0], "p2": rows[i * n2 + j][1],
                          "phi": rows[i * n2 + j][2]} for i, j in minima]})
    print(f"sampled {len(rows)} cells, {len(minima)} local minima -> {out}")
    return EXIT_OK


def cmd_presets(args) -> int:
    if not args.names and not args.all:
        for name, fn in PRESETS.items():
            doc = (fn.__doc__ or "").strip().splitlines()
            print(f"{name:20s} {doc[0] if doc else ''}")
        return EXIT_OK
    out = _out_dir(args)
    for name in (list(PRESETS) if args.all else args.names):
        path = out / f"{name}.json"
        path.write_text(dump_scene(get_preset(name)))
        print(f"wrote {path}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffcontact", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        src = p.add_mutually_exclusive_group()
        src.add_argument("--scene", help="scene JSON file")
        src.add_argument("--preset", choices=sorted(PRESETS), help="built-in scene instead of a file")
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--contact", choices=["linear", "tanh", "hybrid"], help="override contact variant")
        p.add_argument("--kn", type=float, help="override contact stiffness")
        p.add_argument("--dt", type=float, help="override time step")
        p.add_argument("--steps", type=int, help="override number of steps")
        p.add_argument("--seed", type=int, help="override scene seed (marker noise)")
        p.add_argument("--threads", type=int, default=1, help="worker processes (landscape only)")

    commands = (("simulate", cmd_simulate, "run the scene and write the trajectory"),
                ("grad-check", cmd_grad_check, "compare adjoint, direct and finite-difference gradients"),
                ("optimize", cmd_optimize, "minimize the scene objective (or run staged estimation)"),
                ("landscape", cmd_landscape, "sample the objective on the scene's parameter grid"))
    for name, fn, text in commands:
        p = sub.add_parser(name, help=text)
        common(p, "out")
        p.set_defaults(func=fn)
    p = sub.add_parser("presets", help="list built-in scenes or write them as JSON")
    p.add_argument("names", nargs="*", help="presets to write (default: list them)")
    p.add_argument("--all", action="store_true", help="write every preset")
    p.add_argument("--out", default="scenes", help="output directory")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        unknown = [n for n in args.names if n not in PRESETS]
        if unknown:
            print(f"unknown preset(s): {', '.join(unknown)}", file=sys.stderr)
            return EXIT_SCHEMA
    try:
        return args.func(args)
    except SceneError as exc:
        for where, msg in exc.diagnostics:
            print(f"scene error: {where}: {msg}", file=sys.stderr)
        return EXIT_SCHEMA
    except NonConvergence as exc:
        print(f"simulation did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except OptimizerAbort as exc:
        print(f"optimizer aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
