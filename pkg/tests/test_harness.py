import json
import os

import numpy as np
import pytest

from tacsim import harness
from tacsim.baselines.mpm import MpmConfig
from tacsim.harness import (
    SolverFailure,
    arrow_svg,
    batch_run,
    bench,
    compare_models,
    default_workers,
    run_scene,
)
from tacsim.scene import Scene
from tacsim.solver import SolverConfig
from tacsim.tactile import MarkerField, read_fields_csv

SMALL = dict(resolution=(8, 6, 1))


def test_run_scene_outputs(tmp_path):
    sc = Scene(name="p", n_frames=3, **SMALL)
    res = run_scene(sc, tmp_path)
    assert len(res.fields) == 3
    diag = json.loads((tmp_path / "p.diag.json").read_text())
    assert diag["error"] is None and diag["frames"] == 3
    assert all(d > 0 for fr in diag["min_distance_per_step"] for d in fr if d is not None)
    assert len(diag["iterations_per_step"]) == 3 and diag["wall_time_s"] > 0
    back = read_fields_csv(tmp_path / "p.csv")
    assert np.allclose(back[-1].u, res.fields[-1].u, rtol=1e-8)
    res2 = run_scene(sc)
    assert res2.csv() == res.csv()


def test_preload_frames_dropped():
    res = run_scene(Scene(name="s", mode="slide", n_frames=2, **SMALL))
    assert len(res.fields) == 2 and [f.frame_id for f in res.fields] == [0, 1]
    assert res.diagnostics["n_preload"] == 1


def test_on_step_hook():
    seen = []
    run_scene(Scene(name="h", n_frames=1, **SMALL), on_step=lambda pose, lin, ang: seen.append(lin))
    assert seen and np.all(np.isfinite(seen))


def test_solver_failure_keeps_partial(tmp_path):
    sc = Scene(name="f", n_frames=3, solver=SolverConfig(max_iters=1), **SMALL)
    with pytest.raises(SolverFailure) as exc:
        run_scene(sc, tmp_path)
    assert exc.value.result.error
    diag = json.loads((tmp_path / "f.diag.json").read_text())
    assert diag["error"]


def test_default_workers(monkeypatch):
    monkeypatch.setenv("TACSIM_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("TACSIM_THREADS", "zero")
    with pytest.raises(ValueError):
        default_workers()
    monkeypatch.delenv("TACSIM_THREADS")
    assert default_workers() == (os.cpu_count() or 1)


def test_batch_empty():
    s = batch_run([], 2)
    assert s["scenes"] == [] and s["failures"] == [] and s["total_frames"] == 0


def test_batch_worker_invariance(tmp_path):
    scenes = [
        Scene(name="a", n_frames=2, **SMALL),
        Scene(name="b", shape="moon", mode="slide", n_frames=2, **SMALL),
        Scene(name="bad", n_frames=2, solver=SolverConfig(max_iters=1), **SMALL),
        Scene(name="c", shape="triangle", mode="rotate", n_frames=1, **SMALL),
    ]
    s1 = batch_run(scenes, 1, tmp_path / "w1")
    s2 = batch_run(scenes, 2, tmp_path / "w2")
    assert [f["index"] for f in s1["failures"]] == [2] == [f["index"] for f in s2["failures"]]
    for e1, e2 in zip(s1["scenes"], s2["scenes"]):
        assert e1["csv"] == e2["csv"]
        assert (tmp_path / "w1" / e1["csv"]).read_bytes() == (tmp_path / "w2" / e2["csv"]).read_bytes()
    assert s1["total_frames"] == s2["total_frames"] == 2 + 2 + 1 + len(s1["scenes"][2:3]) * s1["scenes"][2]["frames"]


def test_batch_rejects_bad_workers():
    with pytest.raises(ValueError):
        batch_run([Scene()], 0)


def test_compare_ipc_ipc_and_penalty(tmp_path):
    sc = Scene(name="cmp", **SMALL)
    rep = compare_models(sc, ["ipc", "ipc", "penalty"], tmp_path)
    mse = np.array(rep["mse"])
    assert mse.shape == (10, 3, 3)
    assert np.all(mse[:, 0, 1] == 0) and np.all(mse[:, 1, 0] == 0)
    assert rep["max_u"]["penalty"][-1] == pytest.approx(rep["max_u"]["ipc"][-1], rel=1e-9)
    assert (tmp_path / "compare.json").exists() and (tmp_path / "fields.csv").exists()
    svg = (tmp_path / "cmp_penalty.svg").read_text()
    assert svg.count("<line") == 63
    lines = (tmp_path / "fields.csv").read_text().splitlines()
    assert lines[0].startswith("model,") and len(lines) == 1 + 2 * 10 * 63


def test_compare_mpm_completeness():
    mpm = MpmConfig(steps_per_frame=4, settle_steps=0)
    sc = Scene(name="m", n_frames=2, mpm=mpm, **SMALL)
    rep = compare_models(sc, ["ipc", "mpm"])
    mse = np.array(rep["mse"])
    assert mse.shape == (2, 2, 2) and np.all(np.isfinite(mse))
    assert rep["results"]["mpm"].diagnostics["max_mass_rel_error"] <= 1e-12


def test_compare_errors():
    with pytest.raises(ValueError):
        compare_models(Scene(), ["ipc"])
    with pytest.raises(ValueError):
        compare_models(Scene(), ["ipc", "fem"])


def test_arrow_svg():
    u = np.zeros((7, 9, 2))
    u[3, 4] = [1e-4, 0]
    svg = arrow_svg(MarkerField(u), gain=1e5)
    assert svg.startswith("<svg") and 'x2="190.00"' in svg
    assert arrow_svg(MarkerField.zeros()).count("<line") == 63


def test_bench_small():
    rep = bench(envs=2, workers=1)
    assert rep["envs"] == 2 and rep["total_frames"] == 8 and rep["fps"] > 0 and not rep["failures"]
