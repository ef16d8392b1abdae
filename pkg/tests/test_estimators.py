"""scikit-learn wrapper around scene parameter estimation."""

import numpy as np
import pytest
from sklearn.base import clone

from diffcontact.estimators import SceneParameterEstimator
from diffcontact.presets import get_preset

FREE = [f"ball.init_{k}[{i}]" for k in ("position", "velocity") for i in range(3)]


@pytest.fixture(scope="module")
def recording():
    scene = get_preset("synthetic-real2sim", steps=10)
    X = scene.synthetic_markers(scene.build_system()).reshape(11, -1)
    return scene, X


def test_clone_and_params():
    est = SceneParameterEstimator(max_simulations=5, free=FREE)
    params = est.get_params()
    assert params["max_simulations"] == 5 and params["free"] == FREE
    other = clone(est)
    assert other.get_params() == params and other is not est


def test_fit_predict_score(recording):
    scene, X = recording
    est = SceneParameterEstimator(scene=scene, free=FREE, max_simulations=40).fit(X)
    truth = scene.truth_parameters(est.system_)
    assert est.coef_.shape == truth.shape
    assert est.objective_ < 1e-3 * est.result_.phi0
    for name in FREE:
        j = est.system_.param_names.index(name)
        assert est.params_[name] == pytest.approx(truth[j], abs=1e-2)
    assert est.predict().shape == X.shape
    assert est.score(X) > 0.99


def test_bad_shape(recording):
    scene, X = recording
    with pytest.raises(ValueError, match="shape"):
        SceneParameterEstimator(scene=scene).fit(X[:, :5])
    with pytest.raises(ValueError, match="two rows"):
        SceneParameterEstimator(scene=scene).fit(X[:1])


def test_staged_needs_block():
    scene = get_preset("throw-to-point")
    with pytest.raises(ValueError):
        SceneParameterEstimator(scene=scene, staged=True).fit(np.zeros((3, 3)))
