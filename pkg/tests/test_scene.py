"""Scene format: round trips, validation diagnostics and builders."""

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from diffcontact.presets import PRESETS, get_preset
from diffcontact.scene import SceneError, dump_scene, load_scene, parse_scene, scene_from_dict

finite = st.floats(-10, 10, allow_nan=False)
vec3 = st.tuples(finite, finite, finite)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_round_trip(name, tmp_path):
    scene = get_preset(name)
    text = dump_scene(scene)
    path = tmp_path / "s.json"
    path.write_text(text)
    again = load_scene(path)
    assert again == scene
    assert dump_scene(again) == text


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_builds(name):
    scene = get_preset(name)
    system = scene.build_system()
    assert system.param_names == scene.parameter_names()
    scene.build_integrator()
    scene.build_solver()


@given(gravity=vec3, dt=st.floats(1e-4, 0.1), steps=st.integers(1, 500),
       masses=st.lists(st.tuples(st.floats(0.01, 100), vec3, vec3), min_size=0, max_size=4),
       variant=st.sampled_from(["linear", "tanh", "hybrid"]), k_n=st.floats(1.0, 1e6))
def test_round_trip_property(gravity, dt, steps, masses, variant, k_n):
    data = {"gravity": gravity, "integrator": {"dt": dt, "steps": steps},
            "contact": {"variant": variant, "k_n": k_n},
            "obstacles": [{"name": "ground"}],
            "bodies": [{"type": "point_mass", "name": f"m{i}", "mass": m, "position": x, "velocity": v}
                       for i, (m, x, v) in enumerate(masses)]}
    scene = scene_from_dict(data)
    text = dump_scene(scene)
    assert parse_scene(text) == scene
    assert dump_scene(parse_scene(text)) == text


def test_empty_scene_defaults():
    scene = parse_scene("{}")
    assert scene.format_version == 1
    system = scene.build_system()
    assert system.bodies == []


def test_syntax_error_has_line():
    with pytest.raises(SceneError) as info:
        parse_scene('{\n  "name": "x",\n  "seed": \n}')
    assert info.value.diagnostics[0][0].startswith("line 4")


def test_schema_error_names_field_and_line():
    text = json.dumps({"name": "x", "bodies": [{"type": "point_mass", "name": "a", "mass": -1.0}]}, indent=2)
    with pytest.raises(SceneError) as info:
        parse_scene(text)
    where, msg = info.value.diagnostics[0]
    assert "mass" in where and where.startswith("line ")
    line = int(where.split()[1].rstrip(":"))
    assert '"mass"' in text.splitlines()[line - 1]
    assert "greater than 0" in msg


def test_unknown_field_rejected():
    with pytest.raises(SceneError, match="gravty: Extra"):
        parse_scene('{"gravty": [0, 0, -9.81]}')


def test_format_version():
    with pytest.raises(SceneError, match="format_version"):
        parse_scene('{"format_version": 2}')


def test_top_level_must_be_object():
    with pytest.raises(SceneError):
        parse_scene("[1, 2]")


@pytest.mark.parametrize("data,fragment", [
    ({"bodies": [{"type": "point_mass", "name": "a", "mass": 1}, {"type": "point_mass", "name": "a", "mass": 1}]},
     "duplicate name"),
    ({"markers": [{"body": "ghost"}]}, "unknown body 'ghost'"),
    ({"parameters": [{"kind": "friction", "target": "nowhere"}]}, "unknown obstacle"),
    ({"parameters": [{"kind": "warp"}]}, "parameters.0.kind"),
    ({"obstacles": [{"name": "g"}], "parameters": [{"kind": "friction", "target": "g"}],
      "optimization": {"free": ["nope"]}}, "unknown parameter 'nope'"),
])
def test_cross_references(data, fragment):
    with pytest.raises(SceneError, match=fragment):
        scene_from_dict(data)


def test_hinge_needs_rigid_bodies():
    data = {"bodies": [{"type": "point_mass", "name": "a", "mass": 1}, {"type": "point_mass", "name": "b", "mass": 1}],
            "couplings": [{"type": "hinge", "name": "h", "a": {"body": "a"}, "b": {"body": "b"}}]}
    with pytest.raises(SceneError, match="must be one of"):
        scene_from_dict(data)


def test_synthetic_markers_seeded():
    scene = get_preset("synthetic-real2sim", noise=0.01, steps=10)
    system = scene.build_system()
    a = scene.synthetic_markers(system)
    b = scene.synthetic_markers(system)
    clean = scene.synthetic_markers(system, noise=0.0)
    assert np.array_equal(a, b)
    assert np.all(np.abs(a - clean) <= 0.01 + 1e-12)
    assert not np.array_equal(a, clean)
