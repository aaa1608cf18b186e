"""Implicit Euler time stepping by preconditioned Dai-Kou nonlinear CG.

Each step minimizes inertia + h^2 elasticity + barrier + lagged friction
without forming the Hessian: only gradients, the Hessian diagonal (for the
Jacobi preconditioner) and the curvature ``p^T H p`` along the search
direction are evaluated. The step length is capped analytically so no
vertex moves more than ``dhat / 2`` per iteration, and a per-pair bound
keeps every candidate gap open without continuous collision detection.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import contact as ct
from .energy import (
    BarrierParams,
    EnergyReport,
    FeasibilityError,
    FrictionParams,
    Material,
    elastic_energy,
    elastic_quadform,
    friction_energy,
    friction_quadform,
    inertia_energy,
    inertia_quadform,
)
from .geometry import SurfaceMesh, TetMesh, extract_surface
from .rigid import Pose, RigidScript

log = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.81])


class ScriptError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    h: float = 5e-3
    max_iters: int = 200
    tol_dx: float = 1e-7
    barrier: BarrierParams = field(default_factory=BarrierParams)
    friction: FrictionParams = field(default_factory=FrictionParams)
    gravity: bool = False
    self_contact: bool = False
    # fraction of a pair's gap one iterate may close
    gap_fraction: float = 0.9
    # extra candidate search distance beyond dhat
    candidate_margin: float = 2e-4

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol_dx > 0:
            raise ValueError("tol_dx must be positive")


@dataclass
class SimState:
    x: np.ndarray
    v: np.ndarray
    t: float = 0.0
    rigid_pose: Pose | None = None
    scratch: dict = field(default_factory=dict)

    def copy(self) -> "SimState":
        return SimState(self.x.copy(), self.v.copy(), self.t, self.rigid_pose, {})

    @classmethod
    def at_rest(cls, mesh: TetMesh, pose: Pose | None = None) -> "SimState":
        return cls(np.array(mesh.vertices), np.zeros_like(mesh.vertices), 0.0, pose)


@dataclass
class StepInfo:
    iterations: int
    converged: bool
    grad_norm: float
    min_distance: float
    energy_start: float
    energy_end: float
    n_contacts: int
    step_inf_norms: list


# ---------------------------------------------------------------------------
# search direction and step length


def dk_direction(g, g_prev, p_prev, P):
    """Preconditioned Dai-Kou direction; ``-P g`` without usable history."""
    g = np.asarray(g, float)
    if g_prev is None or p_prev is None:
        return -P * g
    y = g - g_prev
    yp = float(np.vdot(y, p_prev))
    scale = float(np.linalg.norm(y) * np.linalg.norm(p_prev))
    if abs(yp) <= 1e-30 * scale or scale == 0.0:
        return -P * g
    Py = P * y
    beta = float(np.vdot(g, Py)) / yp - (float(np.vdot(y, Py)) / yp) * (float(np.vdot(p_prev, g)) / yp)
    return -P * g + beta * p_prev


def step_size(g, p, quadform: float, dhat: float) -> float:
    """``min(alpha_upper, -g.p / p^T H p)`` with ``alpha_upper = dhat/(2|p|_inf)``.

    Non-positive curvature falls back to ``alpha_upper``; a zero direction
    returns 0 (converged).
    """
    pinf = float(np.max(np.abs(p))) if np.size(p) else 0.0
    if pinf == 0.0:
        return 0.0
    upper = dhat / (2.0 * pinf)
    # rounding may leave upper * pinf one ulp above dhat / 2
    while upper * pinf > 0.5 * dhat:
        upper = np.nextafter(upper, 0.0)
    if not quadform > 0:
        return upper
    return min(upper, -float(np.vdot(g, p)) / quadform)


# ---------------------------------------------------------------------------
# simulator


class Simulator:
    """One gel pad against one scripted rigid shell.

    Owns all per-environment data; nothing is shared between instances.
    """

    def __init__(self, mesh: TetMesh, mat: Material, cfg: SolverConfig, shell: SurfaceMesh | None = None):
        self.mesh = mesh
        self.mat = mat
        self.cfg = cfg
        self.shell = shell
        self.surface = extract_surface(mesh)
        self.masses = mesh.lumped_masses(mat.rho)
        self.free = mesh.free_mask()
        self.n = mesh.n_vertices
        self.fp = FrictionParams(cfg.friction.eps_v, mat.mu_f)

    # -- helpers ---------------------------------------------------------
    def rigid_vertices(self, pose: Pose | None) -> np.ndarray:
        if self.shell is None or pose is None:
            return np.zeros((0, 3))
        return pose.apply(self.shell.vertices)

    def _candidates(self, x, xr) -> ct.Candidates:
        radius = self.cfg.barrier.dhat + self.cfg.candidate_margin
        if len(xr) == 0:
            if self.cfg.self_contact:
                return ct.self_candidates(self.surface, x, radius)
            return ct.Candidates(radius=radius)
        shell_ids = self.shell
        return ct.broad_phase(self.surface, x, shell_ids, xr, radius, self.n, self.cfg.self_contact)

    def energy(self, x, xr, ctx) -> tuple[EnergyReport, ct.PairEval]:
        X = np.vstack([x, xr])
        ev = ct.evaluate_pairs(ctx["cands"], X)
        if len(ev.d) and ev.d.min() <= 0:
            raise FeasibilityError(f"gap closed: min distance {ev.d.min():.3e}")
        h = self.cfg.h
        rep = inertia_energy(x, ctx["xhat"], self.masses)
        rep = rep + elastic_energy(self.mesh, x, self.mat, h)
        rep = rep + ct.barrier_energy(ev, self.n, self.cfg.barrier, h * h)
        rep = rep + friction_energy(ctx["contacts"], X, ctx["X_t"], self.fp, self.n, h * h)
        rep.gradient[~self.free] = 0.0
        return rep, ev

    def quadform(self, x, xr, p, ev, ctx) -> float:
        p_full = np.vstack([p, np.zeros_like(xr)])
        X = np.vstack([x, xr])
        h2 = self.cfg.h**2
        return (
            inertia_quadform(p, self.masses)
            + elastic_quadform(self.mesh, x, p, self.mat, self.cfg.h)
            + ct.barrier_quadform(ev, p_full, self.cfg.barrier, h2)
            + friction_quadform(ctx["contacts"], X, ctx["X_t"], p_full, self.fp, h2)
        )

    # -- one implicit Euler step ------------------------------------------
    def step(self, state: SimState, target: Pose | None = None) -> tuple[SimState, StepInfo]:
        cfg = self.cfg
        h, dhat = cfg.h, cfg.barrier.dhat
        x_t = state.x
        xhat = x_t + h * state.v
        if cfg.gravity:
            xhat = xhat + (h * h) * GRAVITY * self.free[:, None]
        xhat[~self.free] = x_t[~self.free]
        pose0 = state.rigid_pose
        target = pose0 if target is None else target
        xr_t = self.rigid_vertices(pose0)
        xr_goal = self.rigid_vertices(target)
        X_t = np.vstack([x_t, xr_t])

        cands = self._candidates(x_t, xr_t)
        contacts = ct.narrow_phase(cands, X_t, dhat)
        ct.build_friction_anchors(contacts, X_t, cfg.barrier, self.mat)
        ctx = {"xhat": xhat, "X_t": X_t, "cands": cands, "contacts": contacts}
        margin = cands.radius - dhat
        moved = 0.0
        gel_factor = 2.0 if cfg.self_contact else 1.0

        x = x_t.copy()
        xr = xr_t.copy()
        rigid_done = len(xr) == 0 or np.array_equal(xr, xr_goal)
        g_prev = p_prev = None
        e_start = None
        steps = []
        converged = False
        it = 0
        for it in range(1, cfg.max_iters + 1):
            if not rigid_done:
                ev = ct.evaluate_pairs(ctx["cands"], np.vstack([x, xr]))
                rem = xr_goal - xr
                p_full = np.vstack([np.zeros_like(x), rem])
                a = min(1.0, ct.max_safe_step(ev, p_full, 0.5))
                if a >= 1.0:
                    xr = xr_goal.copy()
                    rigid_done = True
                else:
                    xr = xr + a * rem
                moved += a * float(np.max(np.linalg.norm(rem, axis=1)))
                g_prev = p_prev = None
                if moved >= margin:
                    ctx["cands"] = self._candidates(x, xr)
                    moved = 0.0
            rep, ev = self.energy(x, xr, ctx)
            if e_start is None:
                e_start = rep.value
            g = rep.gradient
            P = np.where(self.free[:, None], 1.0 / np.maximum(rep.diag_hessian, 1e-300), 0.0)
            p = dk_direction(g, g_prev, p_prev, P)
            if np.vdot(g, p) >= 0:
                p = -P * g
            quad = self.quadform(x, xr, p, ev, ctx)
            alpha = step_size(g, p, quad, dhat)
            p_full = np.vstack([p, np.zeros_like(xr)])
            alpha = min(alpha, ct.max_safe_step(ev, p_full, cfg.gap_fraction))
            dx = alpha * float(np.max(np.abs(p))) if p.size else 0.0
            steps.append(dx)
            x = x + alpha * p
            moved += gel_factor * alpha * float(np.max(np.linalg.norm(p, axis=1)))
            if moved >= margin:
                ctx["cands"] = self._candidates(x, xr)
                moved = 0.0
            g_prev, p_prev = g, p
            if dx < cfg.tol_dx and rigid_done:
                converged = True
                break
        rep, ev = self.energy(x, xr, ctx)
        dmin = float(ev.d.min()) if len(ev.d) else math.inf
        new = SimState(x, (x - x_t) / h, state.t + h, target if rigid_done else pose0, {})
        if not rigid_done:
            raise FeasibilityError("rigid target not reached within max_iters")
        info = StepInfo(
            iterations=it,
            converged=converged,
            grad_norm=float(np.linalg.norm(rep.gradient)),
            min_distance=dmin,
            energy_start=float(e_start),
            energy_end=float(rep.value),
            n_contacts=len(contacts),
            step_inf_norms=steps,
        )
        return new, info

    def step_energy(self, state: SimState, x, pose: Pose | None = None) -> float:
        """Per-step objective of the step starting at ``state`` evaluated at ``x``."""
        h = self.cfg.h
        xr = self.rigid_vertices(pose if pose is not None else state.rigid_pose)
        xr_t = self.rigid_vertices(state.rigid_pose)
        X_t = np.vstack([state.x, xr_t])
        cands = self._candidates(state.x, xr_t)
        contacts = ct.narrow_phase(cands, X_t, self.cfg.barrier.dhat)
        ct.build_friction_anchors(contacts, X_t, self.cfg.barrier, self.mat)
        xhat = state.x + h * state.v
        xhat[~self.free] = state.x[~self.free]
        ctx = {"xhat": xhat, "X_t": X_t, "cands": cands, "contacts": contacts}
        rep, _ = self.energy(np.asarray(x, float), xr, ctx)
        return rep.value


def implicit_euler_step(state: SimState, mesh: TetMesh, mat: Material, cfg: SolverConfig,
                        shell: SurfaceMesh | None = None, target: Pose | None = None):
    """Advance one step; returns ``(new_state, StepInfo)``."""
    return Simulator(mesh, mat, cfg, shell).step(state, target)


def substep_count(shell: SurfaceMesh | None, a: Pose, b: Pose, dhat: float) -> int:
    if shell is None or a is None or b is None:
        return 1
    disp = np.max(np.linalg.norm(b.apply(shell.vertices) - a.apply(shell.vertices), axis=1))
    return max(1, int(math.ceil(disp / (0.5 * dhat) - 1e-9)))


def simulate_sequence(initial: SimState, script: RigidScript, sim: Simulator, *,
                      settle_steps: int = 0, max_substeps: int = 10000, on_step=None):
    """Run a scripted rigid motion; one state per script frame.

    Rigid motion between frames is split into substeps that each move the
    shell by at most ``dhat / 2``. ``settle_steps`` extra steps hold the
    frame pose before the frame's state is recorded. ``on_step`` receives
    ``(relative_pose, linear_velocity, angular_velocity)`` every substep.
    Returns ``(states, infos)`` where ``infos[i]`` lists the StepInfo of
    every substep of frame ``i``.
    """
    from .rigid import relative_velocity

    if len(script) == 0:
        return [initial], [[]]
    states, infos = [], []
    state = initial
    dhat = sim.cfg.barrier.dhat
    for i, pose in enumerate(script.poses):
        start = state.rigid_pose
        n_sub = substep_count(sim.shell, start, pose, dhat)
        if n_sub > max_substeps:
            raise ScriptError(f"frame {i}: rigid jump needs {n_sub} substeps (limit {max_substeps})")
        frame_infos = []
        for k in range(1, n_sub + settle_steps + 1):
            tgt = start.interpolate(pose, min(k, n_sub) / n_sub) if start is not None else None
            prev_pose = state.rigid_pose
            state, info = sim.step(state, tgt)
            frame_infos.append(info)
            if on_step is not None and tgt is not None:
                lin, ang = relative_velocity(prev_pose, tgt, sim.cfg.h)
                on_step(tgt, lin, ang)
        states.append(state)
        infos.append(frame_infos)
    return states, infos
