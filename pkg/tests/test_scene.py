import json

import numpy as np
import pytest

from tacsim.geometry import build_gel_pad, make_indenter, save_obj, save_tet
from tacsim.protocols import MODES, SHAPES, make_indentation_script, start_pose
from tacsim.rigid import Pose, RigidScript
from tacsim.scene import Scene, SceneError, length, load_scene, scene_from_dict


def test_press_protocol():
    s = make_indentation_script("press", dhat=1e-4)
    assert len(s) == 10 and s.n_preload == 0
    z0 = start_pose(1e-4).position[2]
    assert z0 - s.poses[-1].position[2] == pytest.approx(1e-3)
    steps = np.diff([z0] + [p.position[2] for p in s.poses])
    assert np.allclose(steps, -1e-4)


def test_slide_protocol():
    s = make_indentation_script("slide", dhat=1e-4)
    assert len(s) == 11 and s.n_preload == 1
    pre = s.poses[0].position
    assert start_pose(1e-4).position[2] - pre[2] == pytest.approx(5e-4)
    xs = [p.position[0] for p in s.poses]
    assert np.allclose(np.diff(xs), 1e-4) and xs[-1] == pytest.approx(1e-3)
    assert all(p.position[2] == pre[2] for p in s.poses)


def test_rotate_protocol():
    s = make_indentation_script("rotate", "moon", dhat=1e-4)
    assert len(s) - s.n_preload == 4
    ang = [np.degrees(p.rotation.as_rotvec()[2]) for p in s.poses[1:]]
    assert np.allclose(ang, [0.5, 1.0, 1.5, 2.0])


@pytest.mark.parametrize("mode", MODES)
def test_frame_steps_bounded(mode):
    s = make_indentation_script(mode, retract=False)
    pos = np.array([p.position for p in s.poses[s.n_preload :]])
    if len(pos) > 1:
        assert np.linalg.norm(np.diff(pos, axis=0), axis=1).max() <= 1e-4 + 1e-15
    assert np.all(np.diff(s.times) > 0)


def test_retract_and_errors():
    s = make_indentation_script("press", retract=True, dhat=1e-4)
    assert len(s) == 11 and s.poses[-1].position[2] == pytest.approx(1e-4)
    with pytest.raises(ValueError):
        make_indentation_script("twist")
    with pytest.raises(ValueError):
        make_indentation_script("press", "sphere")


def test_rigid_script_validation():
    with pytest.raises(ValueError):
        RigidScript([Pose(), Pose()], [1.0, 1.0])
    with pytest.raises(ValueError):
        Pose(quat=(0, 0, 0, 2.0))
    s = make_indentation_script("rotate")
    back = RigidScript.from_dict(json.loads(json.dumps(s.to_dict())))
    assert back.n_preload == s.n_preload
    for a, b in zip(s.poses, back.poses):
        assert np.allclose(a.position, b.position) and np.allclose(a.quat, b.quat)


def test_length_units():
    assert length({"value": 5, "unit": "mm"}, "x") == pytest.approx(0.005)
    assert length({"value": [1, 2], "unit": "cm"}, "x") == pytest.approx([0.01, 0.02])
    with pytest.raises(SceneError):
        length(5.0, "x")
    with pytest.raises(SceneError):
        length({"value": 5, "unit": "in"}, "x")


def test_scene_roundtrip():
    sc = Scene(name="a", shape="moon", mode="slide", resolution=(4, 3, 1), n_frames=3)
    back = scene_from_dict(json.loads(json.dumps(sc.to_dict())))
    assert back.to_dict() == sc.to_dict()
    assert back.extent == pytest.approx(sc.extent)


def test_scene_with_script_roundtrip():
    script = make_indentation_script("press", n_frames=2)
    sc = Scene(name="s", script=script)
    back = scene_from_dict(json.loads(json.dumps(sc.to_dict())))
    assert len(back.build_script()) == 2
    assert np.allclose(back.build_script().poses[1].position, script.poses[1].position)


def test_scene_errors(tmp_path):
    for bad in [
        {"shape": "blob"},
        {"mode": "x"},
        {"model": "fem"},
        {"pad": {"extent": [1, 2, 3]}},
        {"pad": {"extent": {"value": [1, 2], "unit": "mm"}}},
        {"pad": {"resolution": [0, 1, 1]}},
        {"material": {"E": -5}},
        {"material": {"rho": 1e-3, "rho_unit": "lb/ft3"}},
        {"solver": {"dhat": 1e-4}},
        {"script": {"frames": []}},
        {"pad": {"mesh": "missing.tet"}},
        [],
    ]:
        with pytest.raises(SceneError):
            scene_from_dict(bad, tmp_path)
    with pytest.raises(SceneError):
        load_scene(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(SceneError):
        load_scene(tmp_path / "bad.json")


def test_table_density_units():
    sc = scene_from_dict({"material": {"E": 6e4, "nu": 0.46, "rho": 2e-3, "mu_f": 1.2, "rho_unit": "g/mm3"}})
    assert sc.material.rho == pytest.approx(2000.0)


def test_mesh_files(tmp_path):
    save_tet(tmp_path / "pad.tet", build_gel_pad(resolution=(2, 2, 1)))
    save_obj(tmp_path / "ind.obj", make_indenter("triangle"))
    sc = load_scene_from(tmp_path, {"pad": {"mesh": "pad.tet"}, "indenter": {"mesh": "ind.obj"}})
    assert len(sc.build_mesh().tets) == 24
    assert sc.build_shell().is_closed()


def load_scene_from(d, data):
    p = d / "scene.json"
    p.write_text(json.dumps(data))
    return load_scene(p)


@pytest.mark.parametrize("shape", SHAPES)
def test_scene_shapes(shape):
    assert Scene(shape=shape).build_shell().is_closed()
