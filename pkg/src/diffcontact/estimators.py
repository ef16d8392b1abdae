"""scikit-learn style wrapper around scene parameter estimation.

``SceneParameterEstimator`` treats a marker recording as the data: each row
of ``X`` is one stored step with the flattened ``(x, y, z)`` positions of
all scene markers, so ``X`` has shape ``(n_t + 1, 3 m)``.  ``fit`` finds the
scene parameters whose simulation reproduces the recording, ``predict``
returns the simulated markers and ``score`` their coefficient of
determination against a recording.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .integrator import simulate
from .objectives import Objective, TrajectoryMatch, record_markers
from .optimize import OptimizationProblem, OptimizerConfig, minimize, staged_estimation
from .presets import get_preset
from .scene import Scene, parse_scene


class SceneParameterEstimator(BaseEstimator):
    """Fit scene parameters to marker trajectories.

    Parameters
    ----------
    scene : Scene, preset name or scene JSON text
        Must define ``markers``; the markers fix the columns of ``X``.
    free : list of parameter names, optional
        Parameters to fit; default all (or the scene's ``optimization.free``).
    method : {"lbfgs", "adam", "gauss-newton"}
    max_simulations : int
        Simulation budget (per phase when ``staged``).
    staged : bool
        Use the staged initial-conditions/material schedule from the scene's
        ``optimization.staged`` block.
    """

    def __init__(self, scene="synthetic-real2sim", free=None, method="lbfgs", max_simulations=100,
                 staged=False):
        self.scene = scene
        self.free = free
        self.method = method
        self.max_simulations = max_simulations
        self.staged = staged

    def _scene(self) -> Scene:
        if isinstance(self.scene, Scene):
            return self.scene
        text = str(self.scene)
        return parse_scene(text) if text.lstrip().startswith("{") else get_preset(text)

    def _markers(self, X, n_markers):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 3 * n_markers:
            raise ValueError(f"X must have shape (n_steps + 1, {3 * n_markers}); got {X.shape}")
        if X.shape[0] < 2:
            raise ValueError("X needs at least two rows (initial state and one step)")
        return X.reshape(X.shape[0], n_markers, 3)

    def fit(self, X, y=None):
        scene = self._scene()
        features = scene.marker_features()
        if not features:
            raise ValueError("scene defines no markers")
        markers = self._markers(X, len(features))
        system = scene.build_system()
        integrator = scene.build_integrator()
        solver = scene.build_solver()
        p0 = scene.initial_parameters(system)
        opt = scene.optimization
        base = opt.config() if opt is not None else OptimizerConfig()
        config = dataclasses.replace(base, method=self.method, max_simulations=self.max_simulations)
        n_steps = markers.shape[0] - 1
        if self.staged:
            if opt is None or opt.staged is None:
                raise ValueError("staged=True needs an optimization.staged block in the scene")
            st = opt.staged
            res = staged_estimation(system, integrator, features, markers, st.initial_conditions, st.materials,
                                    p0, st.ballistic_steps, st.bounce_steps, adam_iterations=st.adam_iterations,
                                    adam_lr=st.adam_lr, config=config, solver=solver)
        else:
            free = self.free if self.free is not None else (opt.free if opt is not None else None)
            problem = OptimizationProblem(system, integrator, Objective([TrajectoryMatch(features, markers)]),
                                          n_steps, free=free, p0=p0, solver=solver)
            res = minimize(problem, None, config)
        self.scene_ = scene
        self.system_ = system
        self.n_steps_ = n_steps
        self.n_markers_ = len(features)
        self.coef_ = np.asarray(res.p, dtype=float)
        self.params_ = dict(zip(system.param_names, (float(v) for v in res.p)))
        self.objective_ = float(res.phi)
        self.result_ = res
        return self

    def predict(self, X=None):
        """Simulated markers at the fitted parameters, shape ``(n_t + 1, 3 m)``.

        ``X`` only sets the number of rows; default the fitted length.
        """
        check_is_fitted(self, "coef_")
        n_steps = self.n_steps_ if X is None else np.asarray(X).shape[0] - 1
        traj = simulate(self.system_, self.scene_.build_integrator(), self.coef_, n_steps,
                        self.scene_.build_solver(), keep_products=False)
        return record_markers(traj, self.scene_.marker_features()).reshape(n_steps + 1, -1)

    def score(self, X, y=None):
        """Coefficient of determination of the simulated markers (missing entries ignored)."""
        X = np.asarray(X, dtype=float)
        pred = self.predict(X)
        ok = np.isfinite(X)
        resid = np.sum((X[ok] - pred[ok]) ** 2)
        mean = np.nanmean(np.where(ok, X, np.nan), axis=0)
        total = np.sum((X - mean)[ok] ** 2)
        return float(1.0 - resid / total) if total > 0 else 0.0
