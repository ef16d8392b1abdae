"""Built-in scenes.

Every preset is a function returning a :class:`~diffcontact.scene.Scene`.
Targets of the throwing scenes are produced by simulating a ground-truth
throw, so they are exactly reachable.
"""

from __future__ import annotations

import math
from functools import lru_cache

from .integrator import simulate
from .scene import (AnchorSpec, ContactSpec, ControlSmoothnessSpec, FeatureSpec, HingeSpec, IntegratorSpec,
                    LandscapeSpec, LinePathSpec, MeshSpec, MotorDampingSpec, MotorSpec, ObjectiveSpec,
                    ObstacleSpec, OptimizationSpec, ParameterSpec, PoseSpec, RigidSpec, Scene, SoftSpec,
                    SphereProxySpec, StagedSpec, TerminalPointSpec, TrajectoryMatchSpec)

INCLINE = math.radians(20.0)


def incline_gravity(angle: float = INCLINE, g: float = 9.81):
    """Gravity for a ground plane inclined by ``angle`` about the y axis (downhill is +x)."""
    return (g * math.sin(angle), 0.0, -g * math.cos(angle))


def box_body(name, size, mass, **kw) -> RigidSpec:
    """Rigid box with its 8 corners as contact proxies."""
    sx, sy, sz = size
    inertia = (mass / 12.0 * (sy * sy + sz * sz), mass / 12.0 * (sx * sx + sz * sz), mass / 12.0 * (sx * sx + sy * sy))
    corners = [(x * sx / 2, y * sy / 2, z * sz / 2) for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]
    return RigidSpec(name=name, mass=mass, inertia=inertia, proxy_points=corners, **kw)


def ball_body(name, radius, mass, **kw) -> RigidSpec:
    """Solid rigid ball with one sphere proxy."""
    i = 0.4 * mass * radius * radius
    return RigidSpec(name=name, mass=mass, inertia=(i, i, i),
                     proxy_spheres=[SphereProxySpec(center=(0.0, 0.0, 0.0), radius=radius)], **kw)


def _ground(friction=0.5, name="ground"):
    return ObstacleSpec(name=name, kind="plane", friction=friction)


# --------------------------------------------------------------------------- contact scenes
def cylinder_drop(variant: str = "hybrid", k_n: float = 100.0, steps: int = 120) -> Scene:
    """Soft disc-shaped cylinder dropped onto a 20 degree incline with c_f = 0.4.

    The cylinder is squat and touches the ground with its bottom rim nodes:
    with c_f only 10% above tan(20 deg) every rim node must hold under its
    own friction cone for the body to come to rest.
    """
    seg = 8
    return Scene(
        name="cylinder-drop",
        description="soft cylinder settling on a 20 degree incline",
        gravity=incline_gravity(),
        integrator=IntegratorSpec(scheme="BDF2", dt=1 / 60, steps=steps),
        contact=ContactSpec(variant=variant, k_n=k_n),
        obstacles=[_ground(0.4)],
        bodies=[SoftSpec(name="cylinder", mesh=MeshSpec(kind="cylinder", radius=0.1, height=0.02, segments=seg),
                         youngs=1e4, poisson=0.3, viscosity=0.1, density=10.0, position=(0.0, 0.0, 0.02),
                         contact_nodes=list(range(1, seg + 1)))],
        parameters=[ParameterSpec(kind="youngs", target="cylinder", lower=1e2, upper=1e7, log=True),
                    ParameterSpec(kind="friction", target="ground", lower=0.0, upper=2.0)],
    )


def tori_drop(variant: str = "linear", steps: int = 60) -> Scene:
    """Two soft tori falling onto a 20 degree incline that ends at a wall."""
    mesh = MeshSpec(kind="torus", major=0.08, minor=0.03, segments=8, sides=4)
    return Scene(
        name="tori-drop",
        description="two tori sliding down an incline into a wall",
        gravity=incline_gravity(),
        integrator=IntegratorSpec(scheme="BDF2", dt=1 / 60, steps=steps),
        contact=ContactSpec(variant=variant, k_n=1e3),
        obstacles=[_ground(0.4), ObstacleSpec(name="wall", point=(0.3, 0.0, 0.0), normal=(-1.0, 0.0, 0.0), friction=0.8)],
        bodies=[SoftSpec(name="torus_a", mesh=mesh, youngs=2e4, viscosity=0.2, density=300.0,
                         position=(0.0, -0.12, 0.05), velocity=(0.5, 0.0, 0.0)),
                SoftSpec(name="torus_b", mesh=mesh, youngs=5e4, viscosity=0.1, density=300.0,
                         position=(0.05, 0.12, 0.15), spin=(1.0, 0.5, 0.0))],
        parameters=[ParameterSpec(kind="youngs", target="torus_a", lower=1e2, upper=1e7, log=True),
                    ParameterSpec(kind="youngs", target="torus_b", lower=1e2, upper=1e7, log=True),
                    ParameterSpec(kind="viscosity", target="torus_a", lower=0.0),
                    ParameterSpec(kind="viscosity", target="torus_b", lower=0.0),
                    ParameterSpec(kind="density", target="torus_a", lower=1.0),
                    ParameterSpec(kind="friction", target="wall", lower=0.0, upper=2.0)],
    )


BOUNCE_DAMPING = (0.0, 2.0, 5.0, 10.0)


def bouncing_cubes(damping=BOUNCE_DAMPING, steps: int = 180) -> Scene:
    """Rigid cubes dropped flat, one per contact damping coefficient k_d."""
    bodies = []
    for i, kd in enumerate(damping):
        bodies.append(box_body(f"cube{i}", (0.1, 0.1, 0.1), 1.0, position=(0.0, 0.3 * i, 0.5), damping=kd))
    return Scene(
        name="bouncing-cubes",
        description="contact damping sweep on symmetric cube bounces",
        integrator=IntegratorSpec(scheme="BDF2", dt=1 / 60, steps=steps),
        contact=ContactSpec(variant="linear", k_n=1e3),
        obstacles=[_ground(0.5)],
        bodies=bodies,
        parameters=[ParameterSpec(kind="damping", target=f"cube{i}", lower=0.0) for i in range(len(damping))],
    )


# --------------------------------------------------------------------------- throwing
THROW_STEPS = 90
THROW_TRUTH = (1.2, 0.1, 1.5)
THROW_GUESS = (0.9, 0.0, 1.2)


def _ball(velocity, spin=(0.0, 0.0, 0.0), damping=2.0):
    return ball_body("ball", 0.1, 1.0, position=(0.0, 0.0, 0.5), velocity=velocity, spin=spin, damping=damping)


def _throw_base(name, velocity, obstacles, parameters, spin=(0.0, 0.0, 0.0), steps=THROW_STEPS,
                damping=2.0, **kw):
    return Scene(name=name, integrator=IntegratorSpec(scheme="BDF2", dt=1 / 60, steps=steps),
                 contact=ContactSpec(variant="linear", k_n=1e3), obstacles=obstacles,
                 bodies=[_ball(velocity, spin, damping)], parameters=parameters, **kw)


def _velocity_params(axes=(0, 1, 2)):
    return [ParameterSpec(kind="init_velocity", target="ball", index=i, lower=-10.0, upper=10.0) for i in axes]


@lru_cache(maxsize=None)
def _final_com(scene_json: str) -> tuple:
    from .scene import parse_scene

    sc = parse_scene(scene_json)
    system = sc.build_system()
    traj = simulate(system, sc.build_integrator(), None, sc.integrator.steps, sc.build_solver(), keep_products=False)
    o = system.offsets[0]
    return tuple(float(v) for v in traj.q[-1][o:o + 3])


def _truth_target(scene: Scene) -> tuple:
    from .scene import dump_scene

    return _final_com(dump_scene(scene))


def throw_to_point(guess=THROW_GUESS, truth=THROW_TRUTH) -> Scene:
    """Choose the throw velocity so the ball's center ends at a target point."""
    # no contact damping: its switch-on at first penetration makes the objective jump
    # whenever a bounce starts one step earlier or later
    obstacles = [_ground(0.3)]
    target = _truth_target(_throw_base("truth", truth, obstacles, [], damping=0.0))
    return _throw_base(
        "throw-to-point", guess, obstacles, _velocity_params(), damping=0.0,
        description="ball center must reach a point at the final step",
        objective=ObjectiveSpec(terms=[TerminalPointSpec(feature=FeatureSpec(body="ball"), target=target)]),
        optimization=OptimizationSpec(method="lbfgs", max_simulations=100),
        landscape=LandscapeSpec(params=("ball.init_velocity[0]", "ball.init_velocity[2]"),
                                lower=(0.0, -1.0), upper=(3.0, 4.0), resolution=(15, 15)),
    )


def throw_to_line(guess=(1.0, 0.0, 1.0)) -> Scene:
    """After the bounce the ball should move along a vertical line (backspin helps)."""
    params = _velocity_params((0, 2)) + [ParameterSpec(kind="init_spin", target="ball", index=1, lower=-100.0, upper=100.0)]
    return _throw_base(
        "throw-to-line", guess, [_ground(0.5)], params,
        description="ball trajectory after the bounce should hug a vertical line",
        objective=ObjectiveSpec(terms=[LinePathSpec(feature=FeatureSpec(body="ball"), point=(0.6, 0.0, 0.0),
                                                    direction=(0.0, 0.0, 1.0), steps=(60, None))]),
        optimization=OptimizationSpec(method="lbfgs", max_simulations=100),
    )


def throw_with_wall(guess=(1.5, 0.0, 1.0), truth=(2.2, 0.0, 1.2)) -> Scene:
    """Hit a target point after rebounding from a wall."""
    obstacles = [_ground(0.3), ObstacleSpec(name="wall", point=(0.8, 0.0, 0.0), normal=(-1.0, 0.0, 0.0), friction=0.3)]
    target = _truth_target(_throw_base("truth", truth, obstacles, []))
    return _throw_base(
        "throw-with-wall", guess, obstacles, _velocity_params(),
        description="ball must reach a point after bouncing off a wall",
        objective=ObjectiveSpec(terms=[TerminalPointSpec(feature=FeatureSpec(body="ball"), target=target)]),
        optimization=OptimizationSpec(method="lbfgs", max_simulations=100),
    )


UPRIGHT_STEPS = 75


def upright_throw(k_n: float = 1e3, guess=(1.0, 1.0, 0.0)) -> Scene:
    """Throw a tall box so it lands upright near a target."""
    box = box_body("box", (0.08, 0.08, 0.2), 1.0, position=(0.0, 0.0, 0.5), velocity=(guess[0], 0.0, guess[1]),
                   spin=(0.0, guess[2], 0.0), damping=5.0)
    params = [ParameterSpec(kind="init_velocity", target="box", index=0, lower=-10.0, upper=10.0),
              ParameterSpec(kind="init_velocity", target="box", index=2, lower=-10.0, upper=10.0),
              ParameterSpec(kind="init_spin", target="box", index=1, lower=-30.0, upper=30.0)]
    return Scene(
        name="upright-throw",
        description="box must land upright at a target point",
        integrator=IntegratorSpec(scheme="BDF2", dt=1 / 60, steps=UPRIGHT_STEPS),
        contact=ContactSpec(variant="linear", k_n=k_n),
        obstacles=[_ground(0.6)],
        bodies=[box],
        parameters=params,
        objective=ObjectiveSpec(terms=[PoseSpec(features=[FeatureSpec(body="box")], targets=[(1.0, 0.0, 0.1)],
                                                upright_body="box", upright_weight=0.1)]),
        optimization=OptimizationSpec(method="lbfgs", max_simulations=60,
                                      continuation=[100.0, 200.0, 400.0, 800.0, 1000.0]),
    )


# --------------------------------------------------------------------------- estimation
REAL2SIM_TRUTH = {
    "ball.init_position[0]": 0.0, "ball.init_position[1]": 0.0, "ball.init_position[2]": 0.35,
    "ball.init_velocity[0]": 1.0, "ball.init_velocity[1]": 0.2, "ball.init_velocity[2]": 0.5,
    "ball.youngs[0]": 5e3, "ground.friction[0]": 0.4,
}
REAL2SIM_GUESS = {
    "ball.init_position[0]": 0.02, "ball.init_position[1]": -0.02, "ball.init_position[2]": 0.38,
    "ball.init_velocity[0]": 0.8, "ball.init_velocity[1]": 0.0, "ball.init_velocity[2]": 0.8,
    "ball.youngs[0]": 5e2, "ground.friction[0]": 0.2,
}


def synthetic_real2sim(noise: float = 0.0, variant: str = "linear", steps: int = 60) -> Scene:
    """Soft ball thrown onto the ground, observed through surface markers."""
    params = [ParameterSpec(kind="init_position", target="ball", index=i) for i in range(3)]
    params += [ParameterSpec(kind="init_velocity", target="ball", index=i) for i in range(3)]
    params += [ParameterSpec(kind="youngs", target="ball", lower=1e2, upper=1e6, log=True),
               ParameterSpec(kind="friction", target="ground", lower=0.0, upper=2.0)]
    names = [p.to_spec().name for p in params]
    t = REAL2SIM_TRUTH
    return Scene(
        name="synthetic-real2sim",
        description="staged estimation of initial conditions and material from synthetic markers",
        integrator=IntegratorSpec(scheme="BDF2", dt=1 / 60, steps=steps),
        contact=ContactSpec(variant=variant, k_n=1e3),
        obstacles=[_ground(t["ground.friction[0]"])],
        bodies=[SoftSpec(name="ball", mesh=MeshSpec(kind="icosphere", radius=0.1, refine=0),
                         youngs=t["ball.youngs[0]"], poisson=0.3, viscosity=0.5, density=500.0,
                         position=tuple(t[f"ball.init_position[{i}]"] for i in range(3)),
                         velocity=tuple(t[f"ball.init_velocity[{i}]"] for i in range(3)))],
        parameters=params,
        markers=[FeatureSpec(body="ball", kind="node", node=i) for i in (1, 3, 5, 7, 9, 11)],
        objective=ObjectiveSpec(terms=[TrajectoryMatchSpec()]),
        optimization=OptimizationSpec(
            method="lbfgs", max_simulations=60, initial_guess=dict(REAL2SIM_GUESS),
            staged=StagedSpec(initial_conditions=names[:6], materials=names[6:], truth=dict(t), noise=noise)),
    )


# --------------------------------------------------------------------------- control
HOPPER_KNOTS = 10
HOPPER_EVERY = 6


def hopper_trajopt(beta: float = 1e-3) -> Scene:
    """Two-link hopper; per-step motor targets drive the base towards a goal."""
    base = box_body("base", (0.2, 0.1, 0.06), 1.0, position=(0.0, 0.0, 0.23))
    leg = box_body("leg", (0.03, 0.03, 0.2), 0.2, position=(0.0, 0.0, 0.1), damping=1.0)
    leg.proxy_points = [(0.0, 0.0, -0.1)]
    base.damping = 1.0
    knots = [0.0] * HOPPER_KNOTS
    return Scene(
        name="hopper-trajopt",
        description="per-step motor controls of an articulated hopper",
        integrator=IntegratorSpec(scheme="BDF2", dt=1 / 60, steps=HOPPER_KNOTS * HOPPER_EVERY),
        contact=ContactSpec(variant="linear", k_n=1e3),
        obstacles=[_ground(0.8)],
        bodies=[base, leg],
        couplings=[HingeSpec(name="hip", a=AnchorSpec(body="base", point=(0.0, 0.0, -0.03)),
                             b=AnchorSpec(body="leg", point=(0.0, 0.0, 0.1)), stiffness=5e4),
                   MotorSpec(name="hip_motor", body_a="base", body_b="leg", axis_a=(0.0, 1.0, 0.0),
                             ref_a=(0.0, 0.0, -1.0), ref_b=(0.0, 0.0, -1.0), stiffness=20.0,
                             knots=knots, every=HOPPER_EVERY),
                   MotorDampingSpec(name="hip_damping", body_a="base", body_b="leg", k_md=0.05)],
        parameters=[ParameterSpec(kind="motor", target="hip_motor", index=k, lower=-1.2, upper=1.2)
                    for k in range(HOPPER_KNOTS)],
        objective=ObjectiveSpec(terms=[
            TerminalPointSpec(feature=FeatureSpec(body="base"), target=(0.3, 0.0, 0.23)),
            ControlSmoothnessSpec(beta=beta, motor="hip_motor")]),
        optimization=OptimizationSpec(method="lbfgs", max_simulations=40),
    )


PRESETS = {
    "cylinder-drop": cylinder_drop,
    "tori-drop": tori_drop,
    "bouncing-cubes": bouncing_cubes,
    "throw-to-point": throw_to_point,
    "throw-to-line": throw_to_line,
    "throw-with-wall": throw_with_wall,
    "synthetic-real2sim": synthetic_real2sim,
    "hopper-trajopt": hopper_trajopt,
    "upright-throw": upright_throw,
}


def get_preset(name: str, **kw) -> Scene:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**kw)
