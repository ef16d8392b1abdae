"""Versioned JSON scene format.

A scene describes gravity, integrator, solver and contact settings,
obstacles, bodies, couplings, the parameter vector, markers and optionally
an objective and an optimization block.  ``load_scene`` validates and
resolves cross references; ``dump_scene`` writes the canonical form, so
``load -> dump -> load`` is the identity.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import meshes
from .contact import ContactModel, Obstacle
from .coupling import Anchor, BallSocket, DistanceSpring, Hinge, Motor, MotorDamping, MotorSchedule
from .integrator import Integrator, SolverConfig, simulate
from .objectives import (ControlSmoothness, Feature, LinePathTarget, Objective, PoseTarget,
                         TerminalPointTarget, TrajectoryMatch, add_uniform_noise, record_markers)
from .optimize import OptimizerConfig
from .rigid import RigidBody
from .soft import SoftBody
from .system import INIT_KINDS, MultiBodySystem, ParamSpec, PointMass

FORMAT_VERSION = 1

Vec3 = tuple[float, float, float]


class SceneError(ValueError):
    """Schema or cross-reference problem; ``diagnostics`` lists ``(where, message)``."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(f"{w}: {m}" for w, m in self.diagnostics))


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


# --------------------------------------------------------------------------- settings
class IntegratorSpec(_Model):
    scheme: Literal["BDF1", "BDF2"] = "BDF2"
    dt: float = Field(1.0 / 60.0, gt=0)
    steps: int = Field(60, ge=1)


class SolverSpec(_Model):
    eps: float = Field(1e-10, gt=0)
    eps_half: float = Field(1e-5, gt=0)
    max_newton_iters: int = Field(100, ge=1)
    ls_factor: float = Field(0.5, gt=0, lt=1)
    ls_min_step: float = Field(2.0 ** -20, gt=0)
    watchdog: int = Field(3, ge=0)


class ContactSpec(_Model):
    variant: Literal["linear", "tanh", "hybrid"] = "linear"
    k_n: float = Field(1e3, gt=0)
    k_t: Optional[float] = Field(None, gt=0)
    eps_reg: float = Field(1e-8, gt=0)
    hybrid_mode: Literal["residual", "active-set"] = "residual"
    max_changes: int = Field(5, ge=1)
    damping_ramp: float = Field(1e-5, gt=0)


class ObstacleSpec(_Model):
    name: str
    kind: Literal["plane", "sphere"] = "plane"
    point: Vec3 = (0.0, 0.0, 0.0)
    normal: Vec3 = (0.0, 0.0, 1.0)
    radius: float = Field(1.0, gt=0)
    inside: bool = False
    friction: float = Field(0.5, ge=0)


# --------------------------------------------------------------------------- bodies
class PointMassSpec(_Model):
    type: Literal["point_mass"] = "point_mass"
    name: str
    mass: float = Field(gt=0)
    position: Vec3 = (0.0, 0.0, 0.0)
    velocity: Vec3 = (0.0, 0.0, 0.0)
    damping: float = Field(0.0, ge=0)


class SphereProxySpec(_Model):
    center: Vec3 = (0.0, 0.0, 0.0)
    radius: float = Field(gt=0)


class RigidSpec(_Model):
    type: Literal["rigid"] = "rigid"
    name: str
    mass: float = Field(gt=0)
    inertia: tuple[Vec3, Vec3, Vec3]
    position: Vec3 = (0.0, 0.0, 0.0)
    rotation: Vec3 = (0.0, 0.0, 0.0)
    velocity: Vec3 = (0.0, 0.0, 0.0)
    spin: Vec3 = (0.0, 0.0, 0.0)
    damping: float = Field(0.0, ge=0)
    proxy_points: list[Vec3] = []
    proxy_spheres: list[SphereProxySpec] = []

    @field_validator("inertia", mode="before")
    @classmethod
    def _diag(cls, v):
        a = np.asarray(v, dtype=float)
        if a.shape == (3,):
            a = np.diag(a)
        return [list(map(float, row)) for row in a]


class MeshSpec(_Model):
    kind: Literal["box", "cube5", "icosphere", "cylinder", "torus", "tet"]
    size: Vec3 = (1.0, 1.0, 1.0)
    divisions: tuple[int, int, int] = (1, 1, 1)
    radius: float = Field(0.5, gt=0)
    height: float = Field(1.0, gt=0)
    major: float = Field(1.0, gt=0)
    minor: float = Field(0.3, gt=0)
    segments: int = Field(8, ge=3)
    layers: int = Field(1, ge=1)
    sides: int = Field(4, ge=3)
    refine: int = Field(0, ge=0, le=3)
    axis: int = Field(2, ge=0, le=2)
    text: Optional[str] = None
    path: Optional[str] = None

    def build(self, base_dir: Path | None = None):
        if self.kind == "box":
            return meshes.box(self.size, self.divisions)
        if self.kind == "cube5":
            return meshes.cube5(self.size[0])
        if self.kind == "icosphere":
            return meshes.icosphere(self.radius, refine=self.refine)
        if self.kind == "cylinder":
            return meshes.cylinder(self.radius, self.height, self.segments, self.layers, axis=self.axis)
        if self.kind == "torus":
            return meshes.torus(self.major, self.minor, self.segments, self.sides, axis=self.axis)
        text = self.text
        if text is None:
            if self.path is None:
                raise SceneError([("mesh", "tet mesh needs 'text' or 'path'")])
            p = Path(self.path)
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            text = p.read_text()
        return meshes.read_tet(text)


class SoftSpec(_Model):
    type: Literal["soft"] = "soft"
    name: str
    mesh: MeshSpec
    youngs: float = Field(1e4, gt=0)
    poisson: float = Field(0.3, ge=0, lt=0.5)
    viscosity: float = Field(0.0, ge=0)
    density: float = Field(1000.0, gt=0)
    position: Vec3 = (0.0, 0.0, 0.0)
    velocity: Vec3 = (0.0, 0.0, 0.0)
    spin: Vec3 = (0.0, 0.0, 0.0)
    contact_nodes: Optional[list[int]] = None


BodySpec = Annotated[Union[PointMassSpec, RigidSpec, SoftSpec], Field(discriminator="type")]


# --------------------------------------------------------------------------- couplings
class AnchorSpec(_Model):
    body: Optional[str] = None
    point: Vec3 = (0.0, 0.0, 0.0)


class DistanceSpec(_Model):
    type: Literal["distance"] = "distance"
    name: str
    a: AnchorSpec
    b: AnchorSpec
    rest_length: float = Field(0.0, ge=0)
    stiffness: float = Field(5e5, gt=0)
    unilateral: bool = False


class BallSpec(_Model):
    type: Literal["ball"] = "ball"
    name: str
    a: AnchorSpec
    b: AnchorSpec
    stiffness: float = Field(5e5, gt=0)


class HingeSpec(_Model):
    type: Literal["hinge"] = "hinge"
    name: str
    a: AnchorSpec
    b: AnchorSpec
    axis_a: Vec3 = (0.0, 1.0, 0.0)
    axis_b: Vec3 = (0.0, 1.0, 0.0)
    stiffness: float = Field(5e5, gt=0)


class MotorSpec(_Model):
    type: Literal["motor"] = "motor"
    name: str
    body_a: Optional[str] = None
    body_b: Optional[str] = None
    axis_a: Vec3 = (0.0, 1.0, 0.0)
    ref_a: Vec3 = (1.0, 0.0, 0.0)
    ref_b: Vec3 = (1.0, 0.0, 0.0)
    stiffness: float = Field(1e5, gt=0)
    knots: list[float] = [0.0]
    every: int = Field(1, ge=1)


class MotorDampingSpec(_Model):
    type: Literal["motor_damping"] = "motor_damping"
    name: str
    body_a: Optional[str] = None
    body_b: Optional[str] = None
    k_md: float = Field(1.0, ge=0)


CouplingSpec = Annotated[Union[DistanceSpec, BallSpec, HingeSpec, MotorSpec, MotorDampingSpec],
                         Field(discriminator="type")]


# --------------------------------------------------------------------------- parameters, objective
class ParameterSpec(_Model):
    kind: str
    target: Optional[str] = None
    index: int = Field(0, ge=0)
    lower: Optional[float] = None
    upper: Optional[float] = None
    log: bool = False
    name: Optional[str] = None

    def to_spec(self) -> ParamSpec:
        return ParamSpec(self.kind, self.target, self.index,
                         -np.inf if self.lower is None else self.lower,
                         np.inf if self.upper is None else self.upper, self.log, self.name)


class FeatureSpec(_Model):
    body: str
    kind: Literal["node", "com", "point"] = "com"
    node: int = Field(0, ge=0)
    local: Vec3 = (0.0, 0.0, 0.0)

    def build(self) -> Feature:
        return Feature(self.body, self.kind, self.node, np.array(self.local))


class TerminalPointSpec(_Model):
    type: Literal["terminal_point"] = "terminal_point"
    feature: FeatureSpec
    target: Vec3
    step: Optional[int] = None
    weight: float = Field(1.0, ge=0)


class LinePathSpec(_Model):
    type: Literal["line_path"] = "line_path"
    feature: FeatureSpec
    point: Vec3
    direction: Vec3 = (0.0, 0.0, 1.0)
    steps: tuple[int, Optional[int]] = (1, None)
    weight: float = Field(1.0, ge=0)


class TrajectoryMatchSpec(_Model):
    """Match the scene markers against recorded data (CSV path or synthesized)."""

    type: Literal["trajectory_match"] = "trajectory_match"
    data: Optional[str] = None
    steps: tuple[int, Optional[int]] = (1, None)
    weight: float = Field(1.0, ge=0)


class PoseSpec(_Model):
    type: Literal["pose"] = "pose"
    features: list[FeatureSpec] = []
    targets: list[Vec3] = []
    step: Optional[int] = None
    upright_body: Optional[str] = None
    axis: Vec3 = (0.0, 0.0, 1.0)
    up: Vec3 = (0.0, 0.0, 1.0)
    upright_weight: float = Field(1.0, ge=0)
    weight: float = Field(1.0, ge=0)


class ControlSmoothnessSpec(_Model):
    """Smoothness over parameter groups, or over all knots of one motor."""

    type: Literal["control_smoothness"] = "control_smoothness"
    beta: float = Field(1.0, ge=0)
    motor: Optional[str] = None
    groups: list[list[str]] = []
    weight: float = Field(1.0, ge=0)


TermSpec = Annotated[Union[TerminalPointSpec, LinePathSpec, TrajectoryMatchSpec, PoseSpec, ControlSmoothnessSpec],
                     Field(discriminator="type")]


class ObjectiveSpec(_Model):
    terms: list[TermSpec] = []


class StagedSpec(_Model):
    initial_conditions: list[str]
    materials: list[str]
    truth: dict[str, float] = {}
    noise: float = Field(0.0, ge=0)
    ballistic_steps: Optional[int] = None
    bounce_steps: Optional[int] = None
    adam_iterations: int = Field(75, ge=0, le=75)
    adam_lr: float = Field(0.05, gt=0)


class OptimizationSpec(_Model):
    method: Literal["lbfgs", "adam", "gauss-newton"] = "lbfgs"
    free: Optional[list[str]] = None
    max_simulations: int = Field(100, ge=1)
    max_iterations: int = Field(1000, ge=1)
    gtol: float = Field(1e-12, ge=0)
    ftol: float = Field(1e-14, ge=0)
    adam_lr: float = Field(1e-2, gt=0)
    initial_step: Optional[float] = None
    continuation: Optional[list[float]] = None
    staged: Optional[StagedSpec] = None
    initial_guess: dict[str, float] = {}

    def config(self) -> OptimizerConfig:
        return OptimizerConfig(method=self.method, max_simulations=self.max_simulations,
                               max_iterations=self.max_iterations, gtol=self.gtol, ftol=self.ftol,
                               adam_lr=self.adam_lr, initial_step=self.initial_step)


class LandscapeSpec(_Model):
    params: tuple[str, str]
    lower: tuple[float, float]
    upper: tuple[float, float]
    resolution: tuple[int, int] = (21, 21)


# --------------------------------------------------------------------------- scene
class Scene(_Model):
    format_version: Literal[1] = FORMAT_VERSION
    name: str = "scene"
    description: str = ""
    seed: int = 0
    gravity: Vec3 = (0.0, 0.0, -9.81)
    integrator: IntegratorSpec = IntegratorSpec()
    solver: SolverSpec = SolverSpec()
    contact: ContactSpec = ContactSpec()
    obstacles: list[ObstacleSpec] = []
    bodies: list[BodySpec] = []
    couplings: list[CouplingSpec] = []
    parameters: list[ParameterSpec] = []
    markers: list[FeatureSpec] = []
    objective: Optional[ObjectiveSpec] = None
    optimization: Optional[OptimizationSpec] = None
    landscape: Optional[LandscapeSpec] = None

    @model_validator(mode="after")
    def _references(self):
        errs = []
        bodies = {b.name: b for b in self.bodies}
        for group, items in (("bodies", self.bodies), ("obstacles", self.obstacles), ("couplings", self.couplings)):
            seen = set()
            for i, it in enumerate(items):
                if it.name in seen:
                    errs.append((f"{group}.{i}.name", f"duplicate name {it.name!r}"))
                seen.add(it.name)
        obstacles = {o.name for o in self.obstacles}
        couplings = {c.name: c for c in self.couplings}

        def body_ref(where, name, optional=True, kind=None):
            if name is None:
                if not optional:
                    errs.append((where, "a body is required"))
                return
            if name not in bodies:
                errs.append((where, f"unknown body {name!r}"))
            elif kind is not None and bodies[name].type not in kind:
                errs.append((where, f"body {name!r} must be one of {kind}"))

        for i, c in enumerate(self.couplings):
            if isinstance(c, (DistanceSpec, BallSpec, HingeSpec)):
                body_ref(f"couplings.{i}.a.body", c.a.body)
                body_ref(f"couplings.{i}.b.body", c.b.body)
                if isinstance(c, HingeSpec):
                    for side in ("a", "b"):
                        nm = getattr(c, side).body
                        body_ref(f"couplings.{i}.{side}.body", nm, kind=("rigid",))
            else:
                body_ref(f"couplings.{i}.body_a", c.body_a, kind=("rigid",))
                body_ref(f"couplings.{i}.body_b", c.body_b, kind=("rigid",))
        names = []
        for i, p in enumerate(self.parameters):
            where = f"parameters.{i}"
            try:
                spec = p.to_spec()
            except ValueError as exc:
                errs.append((f"{where}.kind", str(exc)))
                continue
            names.append(spec.name)
            if spec.kind in ("youngs", "viscosity", "density", "damping") or spec.kind in INIT_KINDS:
                body_ref(f"{where}.target", spec.target, optional=False)
            elif spec.kind == "friction":
                if spec.target not in obstacles:
                    errs.append((f"{where}.target", f"unknown obstacle {spec.target!r}"))
            elif spec.kind == "motor":
                if not isinstance(couplings.get(spec.target), MotorSpec):
                    errs.append((f"{where}.target", f"unknown motor {spec.target!r}"))
                elif spec.index >= len(couplings[spec.target].knots):
                    errs.append((f"{where}.index", "knot index out of range"))
        if len(set(names)) != len(names):
            errs.append(("parameters", "duplicate parameter names"))
        for i, m in enumerate(self.markers):
            body_ref(f"markers.{i}.body", m.body, optional=False)
        if self.objective is not None:
            for i, t in enumerate(self.objective.terms):
                where = f"objective.terms.{i}"
                feats = [t.feature] if hasattr(t, "feature") else list(getattr(t, "features", []))
                for f in feats:
                    body_ref(f"{where}.feature.body", f.body, optional=False)
                if isinstance(t, PoseSpec):
                    if len(t.features) != len(t.targets):
                        errs.append((f"{where}.targets", "one target per feature required"))
                    body_ref(f"{where}.upright_body", t.upright_body, kind=("rigid",))
                if isinstance(t, ControlSmoothnessSpec):
                    if t.motor is not None and not isinstance(couplings.get(t.motor), MotorSpec):
                        errs.append((f"{where}.motor", f"unknown motor {t.motor!r}"))
                    for g in t.groups:
                        for nm in g:
                            if nm not in names:
                                errs.append((f"{where}.groups", f"unknown parameter {nm!r}"))
                if isinstance(t, TrajectoryMatchSpec) and not self.markers:
                    errs.append((where, "trajectory match needs scene markers"))
        opt = self.optimization
        if opt is not None:
            refs = list(opt.free or []) + list(opt.initial_guess)
            if opt.staged is not None:
                refs += opt.staged.initial_conditions + opt.staged.materials + list(opt.staged.truth)
            for nm in refs:
                if nm not in names:
                    errs.append(("optimization", f"unknown parameter {nm!r}"))
        if self.landscape is not None:
            for nm in self.landscape.params:
                if nm not in names:
                    errs.append(("landscape.params", f"unknown parameter {nm!r}"))
        if errs:
            raise ValueError("; ".join(f"{w}: {m}" for w, m in errs))
        return self

    # ---------------------------------------------------------------- builders
    def parameter_names(self) -> list[str]:
        return [p.to_spec().name for p in self.parameters]

    def build_system(self, base_dir: Path | None = None, contact: dict | None = None) -> MultiBodySystem:
        bodies = []
        for b in self.bodies:
            if isinstance(b, PointMassSpec):
                bodies.append(PointMass(b.mass, np.array(b.position), np.array(b.velocity), b.damping, b.name))
            elif isinstance(b, RigidSpec):
                bodies.append(RigidBody(
                    b.mass, np.array(b.inertia), np.array(b.position), np.array(b.rotation),
                    np.array(b.velocity), np.array(b.spin),
                    proxy_points=np.array(b.proxy_points, dtype=float).reshape(-1, 3),
                    proxy_spheres=[(np.array(s.center), s.radius) for s in b.proxy_spheres],
                    damping=b.damping, name=b.name))
            else:
                nodes, tets = b.mesh.build(base_dir)
                cn = None if b.contact_nodes is None else np.array(b.contact_nodes, dtype=np.int64)
                bodies.append(SoftBody(nodes, tets, b.youngs, b.poisson, b.viscosity, b.density, b.name,
                                       np.array(b.position), np.array(b.velocity), np.array(b.spin), cn))
        obstacles = [Obstacle(o.kind, np.array(o.point), np.array(o.normal), o.radius, o.inside, o.friction, o.name)
                     for o in self.obstacles]
        couplings = []
        for c in self.couplings:
            if isinstance(c, DistanceSpec):
                couplings.append(DistanceSpring(_anchor(c.a), _anchor(c.b), c.rest_length, c.stiffness,
                                                c.unilateral, c.name))
            elif isinstance(c, BallSpec):
                couplings.append(BallSocket(_anchor(c.a), _anchor(c.b), c.stiffness, c.name))
            elif isinstance(c, HingeSpec):
                couplings.append(Hinge(_anchor(c.a), _anchor(c.b), np.array(c.axis_a), np.array(c.axis_b),
                                       c.stiffness, c.name))
            elif isinstance(c, MotorSpec):
                couplings.append(Motor(c.body_a, c.body_b, np.array(c.axis_a), np.array(c.ref_a), np.array(c.ref_b),
                                       c.stiffness, MotorSchedule(np.array(c.knots), c.every), c.name))
            else:
                couplings.append(MotorDamping(c.body_a, c.body_b, c.k_md, c.name))
        cs = self.contact.model_dump()
        cs.update(contact or {})
        model = ContactModel(cs["variant"], cs["k_n"], cs["k_t"], cs["eps_reg"], cs["hybrid_mode"], cs["max_changes"],
                             cs["damping_ramp"])
        system = MultiBodySystem(bodies, obstacles, couplings, np.array(self.gravity), model,
                                 [p.to_spec() for p in self.parameters])
        system.finalize(self.integrator.dt)
        return system

    def build_integrator(self) -> Integrator:
        return Integrator(self.integrator.scheme, self.integrator.dt)

    def build_solver(self) -> SolverConfig:
        s = self.solver
        return SolverConfig(eps=s.eps, eps_half=s.eps_half, max_newton_iters=s.max_newton_iters,
                            ls_factor=s.ls_factor, ls_min_step=s.ls_min_step, watchdog=s.watchdog)

    def initial_parameters(self, system: MultiBodySystem) -> np.ndarray:
        """Stored parameter values overridden by ``optimization.initial_guess``."""
        p = system.get_parameters()
        if self.optimization is not None:
            for name, val in self.optimization.initial_guess.items():
                p[system.param_names.index(name)] = val
        return p

    def truth_parameters(self, system: MultiBodySystem) -> np.ndarray:
        """Stored parameter values overridden by ``optimization.staged.truth``."""
        p = system.get_parameters()
        staged = self.optimization.staged if self.optimization is not None else None
        if staged is not None:
            for name, val in staged.truth.items():
                p[system.param_names.index(name)] = val
        return p

    def marker_features(self) -> list[Feature]:
        return [m.build() for m in self.markers]

    def synthetic_markers(self, system: MultiBodySystem, noise: float | None = None) -> np.ndarray | None:
        """Markers recorded from a simulation at the truth parameters.

        Uniform noise of half-width ``noise`` (default ``staged.noise``) is
        drawn with the scene seed; the initial row stays exact.
        """
        if not self.markers:
            return None
        traj = simulate(system, self.build_integrator(), self.truth_parameters(system), self.integrator.steps,
                        self.build_solver(), keep_products=False)
        markers = record_markers(traj, self.marker_features())
        staged = self.optimization.staged if self.optimization is not None else None
        level = noise if noise is not None else (staged.noise if staged is not None else 0.0)
        if level > 0:
            markers = add_uniform_noise(markers, level, self.seed)
        return markers

    def needs_markers(self) -> bool:
        return self.objective is not None and any(t.type == "trajectory_match" for t in self.objective.terms)

    def build_objective(self, system: MultiBodySystem, marker_data: np.ndarray | None = None) -> Objective:
        if self.objective is None:
            raise SceneError([("objective", "scene has no objective")])
        names = system.param_names
        terms = []
        for t in self.objective.terms:
            if isinstance(t, TerminalPointSpec):
                terms.append(TerminalPointTarget(t.feature.build(), np.array(t.target), t.step, t.weight))
            elif isinstance(t, LinePathSpec):
                terms.append(LinePathTarget(t.feature.build(), np.array(t.point), np.array(t.direction),
                                            tuple(t.steps), t.weight))
            elif isinstance(t, TrajectoryMatchSpec):
                if marker_data is None:
                    raise SceneError([("objective", "trajectory match needs marker data")])
                terms.append(TrajectoryMatch(self.marker_features(), marker_data, tuple(t.steps), t.weight))
            elif isinstance(t, PoseSpec):
                terms.append(PoseTarget([f.build() for f in t.features], np.array(t.targets).reshape(-1, 3),
                                        t.step, t.upright_body, np.array(t.axis), np.array(t.up),
                                        t.upright_weight, t.weight))
            else:
                if t.motor is not None:
                    idx = [(spec.index, j) for j, spec in enumerate(system.parameters)
                           if spec.kind == "motor" and spec.target == t.motor]
                    groups = [[j] for _, j in sorted(idx)]
                else:
                    groups = [[names.index(nm) for nm in g] for g in t.groups]
                terms.append(ControlSmoothness(groups, t.beta, t.weight))
        return Objective(terms)


def _anchor(a: AnchorSpec) -> Anchor:
    return Anchor(a.body, np.array(a.point))


# --------------------------------------------------------------------------- io
def _diagnostics(exc: ValidationError, text: str | None = None):
    out = []
    for e in exc.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "scene"
        msg = e["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        line = _locate(text, e["loc"]) if text is not None else None
        out.append((f"line {line}: {loc}" if line else loc, msg))
    return out


def _locate(text: str, loc) -> int | None:
    """Best-effort line number of the last named key in ``loc``."""
    keys = [k for k in loc if isinstance(k, str) and not k.startswith(("function-", "tagged-"))]
    if not keys:
        return None
    needle = f'"{keys[-1]}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def parse_scene(text: str) -> Scene:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError([(f"line {exc.lineno} column {exc.colno}", exc.msg)]) from exc
    return scene_from_dict(data, text)


def scene_from_dict(data: dict, text: str | None = None) -> Scene:
    if not isinstance(data, dict):
        raise SceneError([("scene", "top level must be an object")])
    version = data.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise SceneError([("format_version", f"unsupported version {version!r} (expected {FORMAT_VERSION})")])
    try:
        return Scene.model_validate(data)
    except ValidationError as exc:
        raise SceneError(_diagnostics(exc, text)) from exc


def load_scene(path) -> Scene:
    return parse_scene(Path(path).read_text())


def dump_scene(scene: Scene) -> str:
    """Canonical JSON: every field present, fixed key order, 2-space indent."""
    return json.dumps(scene.model_dump(mode="json"), indent=2) + "\n"
