"""Scene runner, process-pool batch harness, model comparison and benchmark."""

from __future__ import annotations

import json
import logging
import multiprocessing as mp
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .baselines.mpm import run_mpm_script
from .baselines.penalty import force_to_pseudo_displacement, normalization_scale, run_penalty_script
from .energy import FeasibilityError
from .protocols import make_indentation_script, start_pose
from .scene import Scene
from .solver import ScriptError, SimState, Simulator, simulate_sequence
from .tactile import MarkerField, fields_to_csv, frame_errors, init_marker_mapping, marker_displacements

log = logging.getLogger(__name__)

# consumer hook: receives (relative pose, linear velocity, angular velocity) every solver step
StepHook = Callable[[object, np.ndarray, np.ndarray], None]

THREAD_ENV = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")


class SolverFailure(RuntimeError):
    """A scene aborted; ``result`` holds whatever frames finished."""

    def __init__(self, msg, result: "SceneResult"):
        super().__init__(msg)
        self.result = result


@dataclass
class SceneResult:
    name: str
    model: str
    fields: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    error: str | None = None

    def csv(self) -> str:
        return fields_to_csv(self.fields, None if self.model == "ipc" else self.model)

    def write(self, out_dir, stem: str | None = None) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.name
        csv_path = out / f"{stem}.csv"
        diag_path = out / f"{stem}.diag.json"
        csv_path.write_text(self.csv())
        diag = dict(self.diagnostics, error=self.error, model=self.model, frames=len(self.fields))
        diag_path.write_text(json.dumps(diag, indent=2))
        return {"csv": str(csv_path), "diagnostics": str(diag_path)}


def default_workers() -> int:
    env = os.environ.get("TACSIM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"TACSIM_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ValueError("TACSIM_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# single scene


def _observed(script, seq):
    """Drop preload frames and renumber."""
    out = []
    for i, f in enumerate(seq[script.n_preload :]):
        out.append(MarkerField(f.u, i, f.timestamp, f.normal))
    return out


def run_ipc(scene: Scene, on_step: StepHook | None = None) -> SceneResult:
    t0 = time.perf_counter()
    mesh = scene.build_mesh()
    shell = scene.build_shell()
    script = scene.build_script()
    sim = Simulator(mesh, scene.material, scene.solver, shell)
    mapping = init_marker_mapping(mesh)
    rest = mesh.vertices
    state = SimState.at_rest(mesh, start_pose(scene.solver.barrier.dhat))
    res = SceneResult(scene.name, "ipc")
    iters, dmin, conv, dxmax = [], [], [], []
    fields = []

    def record(states, infos):
        for st, inf in zip(states, infos):
            fields.append(marker_displacements(mapping, st.x, rest, len(fields), st.t))
            iters.append([q.iterations for q in inf])
            dmin.append([q.min_distance for q in inf])
            conv.append([q.converged for q in inf])
            dxmax.append([max(q.step_inf_norms, default=0.0) for q in inf])

    try:
        # frame by frame so a failure keeps the finished frames
        for k in range(len(script)):
            sub = type(script)([script.poses[k]], [script.times[k]])
            states, infos = simulate_sequence(state, sub, sim, settle_steps=scene.settle_steps, on_step=on_step)
            record(states, infos)
            state = states[-1]
    except (FeasibilityError, ScriptError, ValueError, FloatingPointError) as exc:
        res.error = f"{type(exc).__name__}: {exc}"
    flat = [i for fr in iters for i in fr]
    res.fields = _observed(script, fields)
    res.diagnostics = {
        "iterations_per_step": iters,
        "min_distance_per_step": [[float(d) if np.isfinite(d) else None for d in fr] for fr in dmin],
        "converged_per_step": conv,
        "max_step_inf_norm_per_step": dxmax,
        "median_iterations": float(np.median(flat)) if flat else None,
        "n_steps": len(flat),
        "wall_time_s": time.perf_counter() - t0,
        "n_preload": script.n_preload,
    }
    if res.error:
        raise SolverFailure(res.error, res)
    return res


def run_mpm(scene: Scene, on_step=None) -> SceneResult:
    t0 = time.perf_counter()
    script = scene.build_script()
    fields, diag = run_mpm_script(scene.build_shell(), script, start_pose(scene.solver.barrier.dhat),
                                  scene.material, scene.mpm, tuple(scene.extent))
    diag["wall_time_s"] = time.perf_counter() - t0
    return SceneResult(scene.name, "mpm", _observed(script, fields), diag)


def reference_press_max_u(scene: Scene) -> float:
    """Largest IPC marker displacement at the last frame of this shape's press."""
    ref = replace(scene, model="ipc", mode="press", script=None, n_frames=None, retract=False, name=scene.name + "-ref")
    return run_ipc(ref).fields[-1].max_norm()


def penalty_scale(scene: Scene, ref_max_u: float, sdf=None):
    ref_script = make_indentation_script("press", scene.shape, dhat=scene.solver.barrier.dhat, frame_dt=scene.solver.h)
    pts, sdf = run_penalty_script(scene.build_shell(), ref_script, start_pose(scene.solver.barrier.dhat),
                                  scene.penalty, scene.solver.h, tuple(scene.extent), sdf=sdf)
    return normalization_scale(pts[-1], ref_max_u), sdf


def run_penalty(scene: Scene, ref_max_u: float | None = None, on_step=None) -> SceneResult:
    t0 = time.perf_counter()
    if ref_max_u is None:
        ref_max_u = scene.penalty_ref_max_u if scene.penalty_ref_max_u is not None else reference_press_max_u(scene)
    scale, sdf = penalty_scale(scene, ref_max_u)
    script = scene.build_script()
    pts, _ = run_penalty_script(scene.build_shell(), script, start_pose(scene.solver.barrier.dhat),
                                scene.penalty, scene.solver.h, tuple(scene.extent), sdf=sdf)
    fields = [force_to_pseudo_displacement(p, scale, i) for i, p in enumerate(pts)]
    cone = max(
        (float(np.max(np.linalg.norm(p.f_t, axis=1) - scene.penalty.mu * np.linalg.norm(p.f_n, axis=1))) for p in pts),
        default=0.0,
    )
    diag = {
        "scale": scale,
        "reference_max_u": ref_max_u,
        "max_cone_excess": cone,
        "flagged_points": int(sum(int(p.flagged.sum()) for p in pts)),
        "wall_time_s": time.perf_counter() - t0,
    }
    return SceneResult(scene.name, "penalty", _observed(script, fields), diag)


def run_scene(scene: Scene, out_dir=None, on_step: StepHook | None = None) -> SceneResult:
    """Simulate one scene with its model; optionally write CSV and diagnostics."""
    runner = {"ipc": run_ipc, "mpm": run_mpm, "penalty": run_penalty}[scene.model]
    try:
        res = runner(scene, on_step=on_step)
    except SolverFailure as exc:
        if out_dir is not None:
            exc.result.write(out_dir)
        raise
    if out_dir is not None:
        res.write(out_dir)
    return res


# ---------------------------------------------------------------------------
# batch


def _pin_threads():
    for k in THREAD_ENV:
        os.environ[k] = "1"


def _batch_worker(args):
    idx, scene = args
    t0 = time.perf_counter()
    try:
        res = run_scene(scene)
        err = None
    except SolverFailure as exc:
        res, err = exc.result, str(exc)
    except Exception as exc:  # isolate any per-scene failure
        res, err = SceneResult(scene.name, scene.model), f"{type(exc).__name__}: {exc}"
    return idx, res.name, res.model, res.csv(), res.diagnostics, err, time.perf_counter() - t0, len(res.fields)


def batch_run(scenes: list, workers: int | None = None, out_dir=None) -> dict:
    """Run independent scenes on a process pool; outputs do not depend on ``workers``."""
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    t0 = time.perf_counter()
    jobs = list(enumerate(scenes))
    if not jobs:
        rows = []
    elif workers == 1:
        rows = [_batch_worker(j) for j in jobs]
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_pin_threads) as pool:
            rows = list(pool.map(_batch_worker, jobs, chunksize=1))
    wall = time.perf_counter() - t0
    rows.sort(key=lambda r: r[0])
    entries, failures = [], []
    total_frames = 0
    for idx, name, model, csv_text, diag, err, dt, nfr in rows:
        stem = f"{idx:04d}_{name}"
        entry = {"index": idx, "name": name, "model": model, "frames": nfr, "wall_time_s": dt, "error": err}
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{stem}.csv").write_text(csv_text)
            (out / f"{stem}.diag.json").write_text(json.dumps(dict(diag, error=err), indent=2))
            entry["csv"] = f"{stem}.csv"
        entries.append(entry)
        total_frames += nfr
        if err:
            failures.append({"index": idx, "name": name, "error": err})
    return {
        "workers": workers,
        "scenes": entries,
        "failures": failures,
        "total_frames": total_frames,
        "wall_time_s": wall,
        "fps": total_frames / wall if wall > 0 and total_frames else 0.0,
    }


# ---------------------------------------------------------------------------
# comparison


def compare_models(scene: Scene, models: list, out_dir=None) -> dict:
    """Run one script through several models; per-frame MSE matrix and max |u|."""
    if len(models) < 2:
        raise ValueError("compare needs at least two models")
    bad = [m for m in models if m not in ("ipc", "mpm", "penalty")]
    if bad:
        raise ValueError(f"unknown models: {bad}")
    results: dict = {}
    ipc_cache = None

    def ipc_result():
        nonlocal ipc_cache
        if ipc_cache is None:
            ipc_cache = run_ipc(replace(scene, model="ipc"))
        return ipc_cache

    for m in dict.fromkeys(models):
        if m == "ipc":
            results[m] = ipc_result()
        elif m == "mpm":
            results[m] = run_mpm(replace(scene, model="mpm"))
        else:
            ref = scene.penalty_ref_max_u
            if ref is None:
                ref = ipc_result().fields[-1].max_norm() if scene.mode == "press" and scene.script is None \
                    else reference_press_max_u(scene)
            results[m] = run_penalty(replace(scene, model="penalty"), ref)
    seqs = [results[m].fields for m in models]
    K = min(len(s) for s in seqs)
    M = len(models)
    mse = np.zeros((K, M, M))
    for a in range(M):
        for b in range(M):
            mse[:, a, b] = frame_errors(seqs[a][:K], seqs[b][:K]) if K else 0.0
    report = {
        "scene": scene.name,
        "models": list(models),
        "frames": K,
        "mse": mse.tolist(),
        "max_u": {m: [f.max_norm() for f in results[m].fields] for m in dict.fromkeys(models)},
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        combined = "".join(
            fields_to_csv(results[m].fields, m).split("\n", 1)[1] if i else fields_to_csv(results[m].fields, m)
            for i, m in enumerate(dict.fromkeys(models))
        )
        (out / "fields.csv").write_text(combined)
        svgs = {}
        for m in dict.fromkeys(models):
            if results[m].fields:
                p = out / f"{scene.name}_{m}.svg"
                p.write_text(arrow_svg(results[m].fields[-1], title=f"{scene.name} {m}"))
                svgs[m] = p.name
        report["svg"] = svgs
        (out / "compare.json").write_text(json.dumps(report, indent=2))
    report["results"] = results
    return report


def arrow_svg(f: MarkerField, gain: float | None = None, cell: float = 40.0, title: str = "") -> str:
    """Fixed 7x9 lattice of arrows; length = u * gain (pixels per meter)."""
    rows, cols = f.u.shape[:2]
    if gain is None:
        peak = f.max_norm()
        gain = 0.8 * cell / peak if peak > 0 else 0.0
    w, h = cols * cell, rows * cell + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" viewBox="0 0 {w:.0f} {h:.0f}">',
        '<defs><marker id="a" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto">'
        '<path d="M0,0 L6,3 L0,6 z" fill="#c03"/></marker></defs>',
        f'<text x="4" y="14" font-size="12" font-family="sans-serif">{title}</text>',
    ]
    for r in range(rows):
        for c in range(cols):
            x0 = (c + 0.5) * cell
            # row 0 is the most negative y; draw y up
            y0 = 20 + (rows - r - 0.5) * cell
            ux, uy = f.u[r, c]
            parts.append(f'<circle cx="{x0:.1f}" cy="{y0:.1f}" r="2" fill="#333"/>')
            parts.append(
                f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{x0 + gain * ux:.2f}" y2="{y0 - gain * uy:.2f}" '
                'stroke="#c03" stroke-width="1.5" marker-end="url(#a)"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# benchmark


def bench_scene(i: int = 0) -> Scene:
    """Small press used for throughput measurements."""
    return Scene(name=f"bench{i:03d}", shape="cube", mode="press", resolution=(8, 6, 1), n_frames=4, seed=i)


def bench(envs: int = 8, workers: int | None = None, scene: Scene | None = None) -> dict:
    """Frames per wall second across ``envs`` copies of a small scene."""
    if envs < 1:
        raise ValueError("envs must be >= 1")
    base = scene or bench_scene()
    scenes = [replace(base, name=f"{base.name}-{i:03d}", seed=i) for i in range(envs)]
    summary = batch_run(scenes, workers)
    return {
        "envs": envs,
        "workers": summary["workers"],
        "total_frames": summary["total_frames"],
        "wall_time_s": summary["wall_time_s"],
        "fps": summary["fps"],
        "failures": summary["failures"],
        "cpu_count": os.cpu_count(),
    }
