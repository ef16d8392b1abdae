"""Differentiable implicit simulation of rigid and soft bodies with frictional contact.

The package integrates multibody systems with BDF1/BDF2 and Newton's method,
computes exact trajectory gradients by adjoint or direct sensitivity
analysis, and uses them for parameter estimation and control optimization.
"""

from .contact import ContactModel, Obstacle
from .coupling import Anchor, BallSocket, DistanceSpring, Hinge, Motor, MotorDamping, MotorSchedule
from .estimators import SceneParameterEstimator
from .integrator import Integrator, NonConvergence, SolverConfig, Trajectory, simulate
from .objectives import (ControlSmoothness, Feature, LinePathTarget, Objective, PoseTarget, TerminalPointTarget,
                         TrajectoryMatch)
from .optimize import (OptimizationProblem, OptimizerAbort, OptimizerConfig, OptimizeResult, continuation,
                       minimize, sample_landscape, staged_estimation)
from .presets import PRESETS, get_preset
from .rigid import RigidBody
from .scene import Scene, SceneError, dump_scene, load_scene, parse_scene
from .sensitivity import adjoint_sweep, direct_gradient, gradient_check, sensitivity_sweep
from .soft import SoftBody
from .system import MultiBodySystem, ParamSpec, PointMass

__version__ = "0.1.0"

__all__ = [
    "Anchor", "BallSocket", "ContactModel", "ControlSmoothness", "DistanceSpring", "Feature", "Hinge",
    "Integrator", "LinePathTarget", "Motor", "MotorDamping", "MotorSchedule", "MultiBodySystem",
    "NonConvergence", "Objective", "Obstacle", "OptimizationProblem", "OptimizeResult", "OptimizerAbort",
    "OptimizerConfig", "PRESETS", "ParamSpec", "PointMass", "PoseTarget", "RigidBody", "Scene", "SceneError",
    "SceneParameterEstimator", "SoftBody", "SolverConfig", "TerminalPointTarget", "Trajectory",
    "TrajectoryMatch", "adjoint_sweep", "continuation", "direct_gradient", "dump_scene", "get_preset",
    "gradient_check", "load_scene", "minimize", "parse_scene", "sample_landscape", "sensitivity_sweep",
    "simulate", "staged_estimation",
]
