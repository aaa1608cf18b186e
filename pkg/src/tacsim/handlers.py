"""Command handlers shared by the CLI and the HTTP service.

Each handler takes plain JSON-like inputs, writes its outputs under
``out_dir`` together with a ``manifest.json`` and returns a JSON-able dict.
Invalid input raises :class:`InputError`; solver aborts raise
:class:`~tacsim.harness.SolverFailure`.
"""

from __future__ import annotations

import json
import platform
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .harness import SolverFailure, batch_run, bench, compare_models, run_scene
from .scene import Scene, SceneError, load_scene, scene_from_dict
from .tacalign.calibration import DEFAULT_BOUNDS, PARAM_NAMES, CalibrationProblem, IpcSequenceBuilder, \
    calibrate_material
from .tacalign.control import MotionSpec, PlantModel, alternate_align, default_plants, gain_distance_study
from .tacalign.randomization import RandomizationConfig, sample_many
from .tactile import read_fields_csv

__all__ = [
    "InputError",
    "SolverFailure",
    "simulate",
    "indent",
    "batch",
    "compare",
    "calibrate",
    "align_control",
    "randomize",
    "run_bench",
]


class InputError(ValueError):
    """Bad request: malformed file, unknown option, inconsistent values."""


def _out(out_dir) -> Path:
    p = Path(out_dir or "tacsim_out")
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_manifest(out: Path, command: str, args: dict, outputs: list, status: str = "ok", error: str | None = None) -> str:
    manifest = {
        "tool": "tacsim",
        "version": __version__,
        "command": command,
        "args": args,
        "outputs": sorted(outputs),
        "status": status,
        "error": error,
        "python": platform.python_version(),
        "finished_unix": round(time.time(), 3),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return str(path)


def _scene(data, base_dir=None) -> Scene:
    try:
        if isinstance(data, (str, Path)):
            return load_scene(data)
        return scene_from_dict(data, base_dir)
    except SceneError as exc:
        raise InputError(str(exc)) from exc


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _run_with_manifest(out: Path, command: str, args: dict, fn):
    try:
        result, outputs = fn()
    except SolverFailure as exc:
        written = [p.name for p in out.iterdir() if p.name != "manifest.json"]
        write_manifest(out, command, args, written, "solver_failure", str(exc))
        raise
    result["manifest"] = write_manifest(out, command, args, outputs)
    return result


# ---------------------------------------------------------------------------


def simulate(scene, out_dir=None, base_dir=None) -> dict:
    sc = _scene(scene, base_dir)
    out = _out(out_dir)

    def go():
        res = run_scene(sc, out)
        files = [f"{sc.name}.csv", f"{sc.name}.diag.json"]
        return {"scene": sc.name, "model": sc.model, "frames": len(res.fields),
                "max_u": [f.max_norm() for f in res.fields], "outputs": files}, files

    return _run_with_manifest(out, "simulate", {"scene": sc.to_dict()}, go)


def indent(shape: str = "cube", mode: str = "press", model: str = "ipc", out_dir=None,
           resolution=None, retract: bool = False) -> dict:
    kw = {"name": f"{shape}_{mode}", "shape": shape, "mode": mode, "model": model, "retract": retract}
    if resolution is not None:
        kw["resolution"] = tuple(int(v) for v in resolution)
    try:
        sc = Scene(**kw)
    except (SceneError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    return simulate(sc.to_dict(), out_dir)


def batch(spec, workers: int | None = None, out_dir=None, base_dir=None) -> dict:
    if isinstance(spec, (str, Path)):
        base_dir = Path(spec).parent
        spec = _load_json(spec)
    if not isinstance(spec, dict) or "scenes" not in spec:
        raise InputError("batch spec needs a 'scenes' list")
    workers = workers if workers is not None else spec.get("workers")
    if workers is not None and int(workers) < 1:
        raise InputError("workers must be >= 1")
    base = Path(base_dir) if base_dir else Path.cwd()
    scenes = []
    for i, entry in enumerate(spec["scenes"]):
        if isinstance(entry, str):
            scenes.append(_scene(base / entry))
        else:
            sc = _scene(entry, base)
            copies = int(entry.get("copies", 1)) if isinstance(entry, dict) else 1
            scenes += [sc] if copies == 1 else [replace(sc, name=f"{sc.name}-{k:03d}") for k in range(copies)]
    out = _out(out_dir or spec.get("output_dir"))

    def go():
        summary = batch_run(scenes, None if workers is None else int(workers), out)
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
        files = ["summary.json"] + [e["csv"] for e in summary["scenes"]] + \
                [e["csv"].replace(".csv", ".diag.json") for e in summary["scenes"]]
        return summary, files

    return _run_with_manifest(out, "batch", {"n_scenes": len(scenes), "workers": workers}, go)


def compare(scene, models, out_dir=None, base_dir=None) -> dict:
    sc = _scene(scene, base_dir)
    if isinstance(models, str):
        models = [m.strip() for m in models.split(",") if m.strip()]
    out = _out(out_dir)

    def go():
        try:
            rep = compare_models(sc, list(models), out)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        rep.pop("results", None)
        files = ["compare.json", "fields.csv"] + list(rep.get("svg", {}).values())
        return rep, files

    return _run_with_manifest(out, "compare", {"scene": sc.name, "models": list(models)}, go)


def calibrate(problem, out_dir=None, base_dir=None) -> dict:
    """Problem keys: ``theta_true`` (synthetic reference) or ``reference_csv``
    (one CSV per protocol), plus optional ``protocols``, ``resolution``,
    ``bounds``, ``popsize``, ``iters``, ``seed``, ``x0``, ``sigma0``, ``tolx``."""
    if isinstance(problem, (str, Path)):
        base_dir = Path(problem).parent
        problem = _load_json(problem)
    base = Path(base_dir) if base_dir else Path.cwd()
    try:
        protocols = tuple((p["shape"], p["mode"], int(p["frames"])) for p in problem.get("protocols", [])) or \
            IpcSequenceBuilder.protocols
        if len({p[2] for p in protocols}) > 1:
            raise InputError("all calibration protocols must use the same frame count")
        builder = IpcSequenceBuilder(protocols, tuple(problem.get("resolution", (8, 6, 1))))
        bounds = tuple(tuple(b) for b in problem.get("bounds", DEFAULT_BOUNDS))
        if "theta_true" in problem:
            reference = builder(np.asarray(problem["theta_true"], float))
        elif "reference_csv" in problem:
            reference = [read_fields_csv(base / p) for p in problem["reference_csv"]]
        else:
            raise InputError("calibration problem needs 'theta_true' or 'reference_csv'")
        prob = CalibrationProblem(bounds, reference, builder)
        popsize = int(problem.get("popsize", 12))
        iters = int(problem.get("iters", 80))
        seed = int(problem.get("seed", 0))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"invalid calibration problem: {exc}") from exc
    out = _out(out_dir)

    def go():
        res = calibrate_material(prob, popsize, iters, seed, x0=problem.get("x0"),
                                 sigma0=float(problem.get("sigma0", 0.3)), tolx=float(problem.get("tolx", 1e-3)))
        rep = res.report()
        if "theta_true" in problem:
            rep["theta_true"] = dict(zip(PARAM_NAMES, map(float, problem["theta_true"])))
        (out / "calibration.json").write_text(json.dumps(rep, indent=2))
        return rep, ["calibration.json"]

    return _run_with_manifest(out, "calibrate", {k: v for k, v in problem.items() if k != "reference_csv"}, go)


def align_control(plants, out_dir=None) -> dict:
    """Keys: ``sim`` and ``real`` plant dicts, ``init`` gain pairs, ``rounds``,
    ``popsize``, ``iters``, ``seed``; missing plants use the bundled scenario."""
    if isinstance(plants, (str, Path)):
        plants = _load_json(plants)
    try:
        d_sim, d_real = default_plants()
        p_sim = PlantModel.from_dict(plants["sim"]) if "sim" in plants else d_sim
        p_real = PlantModel.from_dict(plants["real"]) if "real" in plants else d_real
        init = plants.get("init", [[600.0, 50.0], [400.0, 20.0]])
        init = (tuple(map(float, init[0])), tuple(map(float, init[1])))
        rounds = int(plants.get("rounds", 3))
        spec = MotionSpec(**plants["motion"]) if "motion" in plants else None
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise InputError(f"invalid plants file: {exc}") from exc
    out = _out(out_dir)

    def go():
        res = alternate_align(p_sim, p_real, init, rounds, popsize=int(plants.get("popsize", 12)),
                              iters=int(plants.get("iters", 40)), seed=int(plants.get("seed", 0)), spec=spec)
        rep = res.report()
        (out / "alignment.json").write_text(json.dumps(rep, indent=2))
        files = ["alignment.json"]
        if plants.get("gain_study"):
            study = gain_distance_study(int(plants.get("gain_study_pairs", 20)), int(plants.get("seed", 0)), spec)
            (out / "gain_study.json").write_text(json.dumps(study, indent=2))
            rep["gain_study_pearson_r"] = study["pearson_r"]
            files.append("gain_study.json")
        return rep, files

    return _run_with_manifest(out, "align-control", {"rounds": rounds, "init": init}, go)


def randomize(cfg, seed: int = 0, count: int = 1, out_dir=None) -> dict:
    if isinstance(cfg, (str, Path)):
        cfg = _load_json(cfg)
    if count < 0:
        raise InputError("count must be >= 0")
    try:
        rc = RandomizationConfig.from_dict(cfg or {})
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid randomization config: {exc}") from exc
    out = _out(out_dir)

    def go():
        records = sample_many(rc, int(seed), int(count))
        (out / "randomization.json").write_text(json.dumps(records, indent=2))
        return {"count": len(records), "seed": int(seed), "records": records}, ["randomization.json"]

    return _run_with_manifest(out, "randomize", {"seed": seed, "count": count}, go)


def run_bench(envs: int = 8, workers: int | None = None, out_dir=None) -> dict:
    if envs < 1 or (workers is not None and workers < 1):
        raise InputError("envs and workers must be >= 1")
    out = _out(out_dir)

    def go():
        rep = bench(envs, workers)
        (out / "bench.json").write_text(json.dumps(rep, indent=2))
        return rep, ["bench.json"]

    return _run_with_manifest(out, "bench", {"envs": envs, "workers": workers}, go)
