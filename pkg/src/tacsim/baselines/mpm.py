"""Explicit MLS-MPM gel with quadratic B-splines and fixed-corotated stress.

The indenter enters only as a grid velocity boundary condition: grid nodes
inside its signed distance field move rigidly with it. The lowest grid
layers under the pad are held at zero velocity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from ..energy import Material
from ..geometry import DEFAULT_PAD_EXTENT, SdfGrid, SurfaceMesh, build_sdf_grid, sdf_query
from ..rigid import Pose, RigidScript
from ..tactile import COLS, ROWS, MarkerField, marker_lattice

log = logging.getLogger(__name__)

TRACER_MASS_FRACTION = 1e-6


@dataclass(frozen=True)
class MpmConfig:
    spacing: float | None = None  # default: pad thickness / 8
    ppc: int = 2  # particles per cell along each axis
    cfl: float = 0.3
    vmax: float = 5.0  # explosion threshold (m/s)
    damping: float = 200.0  # grid velocity damping rate (1/s)
    steps_per_frame: int = 20
    settle_steps: int = 20
    margin_cells: int = 3
    sdf_dims: int = 40

    def __post_init__(self):
        if self.ppc < 1 or self.steps_per_frame < 1 or self.settle_steps < 0:
            raise ValueError("ppc and steps_per_frame must be >= 1, settle_steps >= 0")
        if not self.vmax > 0:
            raise ValueError("vmax must be positive")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")


@dataclass
class MpmState:
    x: np.ndarray
    v: np.ndarray
    m: np.ndarray
    V: np.ndarray
    F: np.ndarray
    C: np.ndarray
    x_rest: np.ndarray
    origin: np.ndarray
    spacing: float
    dims: tuple
    z_fixed: float  # grid nodes at or below this height are held still
    tracked: np.ndarray  # (63,) tracer particle ids, row-major
    grid_m: np.ndarray = field(default=None)
    grid_v: np.ndarray = field(default=None)
    t: float = 0.0
    steps: int = 0
    explosions: int = 0


def init_mpm_state(extent=DEFAULT_PAD_EXTENT, mat: Material | None = None, cfg: MpmConfig | None = None) -> MpmState:
    """Particles filling the pad box ``[-X/2, X/2] x [-Y/2, Y/2] x [-Z, 0]``
    plus 63 light tracer particles just under the lattice markers."""
    mat = mat or Material()
    cfg = cfg or MpmConfig()
    X, Y, Z = extent
    dx = cfg.spacing or Z / 8.0
    lo = np.array([-X / 2, -Y / 2, -Z])
    hi = np.array([X / 2, Y / 2, 0.0])
    sub = dx / cfg.ppc
    counts = np.maximum(np.round((hi - lo) / sub).astype(int), 1)
    axes = [lo[i] + (np.arange(counts[i]) + 0.5) * (hi[i] - lo[i]) / counts[i] for i in range(3)]
    gz, gy, gx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    body = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    vol = float(np.prod((hi - lo) / counts))
    markers = marker_lattice(lo, hi, -0.5 * (hi[2] - lo[2]) / counts[2]).reshape(-1, 3)
    x = np.vstack([body, markers])
    n_body = len(body)
    V = np.full(len(x), vol)
    V[n_body:] *= TRACER_MASS_FRACTION
    m = mat.rho * V
    pad = cfg.margin_cells * dx
    origin = lo - pad
    dims = tuple(int(v) for v in np.ceil((hi - lo + 2 * pad) / dx).astype(int) + 1)
    n = len(x)
    return MpmState(
        x=x.copy(),
        v=np.zeros((n, 3)),
        m=m,
        V=V,
        F=np.tile(np.eye(3), (n, 1, 1)),
        C=np.zeros((n, 3, 3)),
        x_rest=x.copy(),
        origin=origin,
        spacing=dx,
        dims=dims,
        z_fixed=float(lo[2] + 0.5 * dx),
        tracked=np.arange(n_body, n),
        grid_m=np.zeros(dims),
        grid_v=np.zeros(dims + (3,)),
    )


def wave_speed(mat: Material) -> float:
    return math.sqrt((mat.lame_lambda + 2 * mat.lame_mu) / mat.rho)


def stable_dt(state: MpmState, mat: Material, cfg: MpmConfig) -> float:
    return cfg.cfl * state.spacing / wave_speed(mat)


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True)
def _weights(fx):
    w = np.empty((3, 3))
    for d in range(3):
        w[0, d] = 0.5 * (1.5 - fx[d]) ** 2
        w[1, d] = 0.75 - (fx[d] - 1.0) ** 2
        w[2, d] = 0.5 * (fx[d] - 0.5) ** 2
    return w


@nb.njit(cache=True)
def _det3(A):
    return (A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
            - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
            + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]))


@nb.njit(cache=True)
def _polar_rotation(F, R, cof):
    """Rotation factor of F (det > 0) into ``R`` by Newton iteration R <- (R + R^-T)/2."""
    R[:, :] = F
    for _ in range(30):
        cof[0, 0] = R[1, 1] * R[2, 2] - R[1, 2] * R[2, 1]
        cof[0, 1] = R[1, 2] * R[2, 0] - R[1, 0] * R[2, 2]
        cof[0, 2] = R[1, 0] * R[2, 1] - R[1, 1] * R[2, 0]
        cof[1, 0] = R[0, 2] * R[2, 1] - R[0, 1] * R[2, 2]
        cof[1, 1] = R[0, 0] * R[2, 2] - R[0, 2] * R[2, 0]
        cof[1, 2] = R[0, 1] * R[2, 0] - R[0, 0] * R[2, 1]
        cof[2, 0] = R[0, 1] * R[1, 2] - R[0, 2] * R[1, 1]
        cof[2, 1] = R[0, 2] * R[1, 0] - R[0, 0] * R[1, 2]
        cof[2, 2] = R[0, 0] * R[1, 1] - R[0, 1] * R[1, 0]
        det = R[0, 0] * cof[0, 0] + R[0, 1] * cof[0, 1] + R[0, 2] * cof[0, 2]
        change = 0.0
        for r in range(3):
            for q in range(3):
                nv = 0.5 * (R[r, q] + cof[r, q] / det)
                change = max(change, abs(nv - R[r, q]))
                R[r, q] = nv
        if change < 1e-13:
            break


@nb.njit(cache=True)
def _p2g(x, v, m, V, F, C, origin, dx, dt, mu, lam, grid_m, grid_mv):
    inv_dx = 1.0 / dx
    fx = np.empty(3)
    base = np.empty(3, np.int64)
    R = np.empty((3, 3))
    cof = np.empty((3, 3))
    affine = np.empty((3, 3))
    for p in range(x.shape[0]):
        for d in range(3):
            g = (x[p, d] - origin[d]) * inv_dx
            base[d] = int(math.floor(g - 0.5))
            fx[d] = g - base[d]
        w = _weights(fx)
        Fp = F[p]
        J = _det3(Fp)
        if J > 0:
            _polar_rotation(Fp, R, cof)
        else:
            U, sig, Vt = np.linalg.svd(Fp)
            if _det3(U) * _det3(Vt) < 0:
                U[:, 2] = -U[:, 2]
            R[:, :] = U @ Vt
        # Kirchhoff stress of fixed-corotated: 2 mu (F - R) F^T + lam (J - 1) J I
        sc = -dt * V[p] * 4.0 * inv_dx * inv_dx
        for r in range(3):
            for q in range(3):
                t = 0.0
                for k in range(3):
                    t += (Fp[r, k] - R[r, k]) * Fp[q, k]
                t *= 2.0 * mu
                if r == q:
                    t += lam * (J - 1.0) * J
                affine[r, q] = sc * t + m[p] * C[p, r, q]
        mp = m[p]
        v0, v1, v2 = mp * v[p, 0], mp * v[p, 1], mp * v[p, 2]
        for i in range(3):
            dp0 = (i - fx[0]) * dx
            for j in range(3):
                dp1 = (j - fx[1]) * dx
                wij = w[i, 0] * w[j, 1]
                for k in range(3):
                    wt = wij * w[k, 2]
                    dp2 = (k - fx[2]) * dx
                    a, b, c = base[0] + i, base[1] + j, base[2] + k
                    grid_m[a, b, c] += wt * mp
                    grid_mv[a, b, c, 0] += wt * (v0 + affine[0, 0] * dp0 + affine[0, 1] * dp1 + affine[0, 2] * dp2)
                    grid_mv[a, b, c, 1] += wt * (v1 + affine[1, 0] * dp0 + affine[1, 1] * dp1 + affine[1, 2] * dp2)
                    grid_mv[a, b, c, 2] += wt * (v2 + affine[2, 0] * dp0 + affine[2, 1] * dp1 + affine[2, 2] * dp2)


@nb.njit(cache=True)
def _g2p(x, v, F, C, origin, dx, dt, grid_v):
    inv_dx = 1.0 / dx
    fx = np.empty(3)
    base = np.empty(3, np.int64)
    nv = np.empty(3)
    nC = np.empty((3, 3))
    Fn = np.empty((3, 3))
    for p in range(x.shape[0]):
        for d in range(3):
            g = (x[p, d] - origin[d]) * inv_dx
            base[d] = int(math.floor(g - 0.5))
            fx[d] = g - base[d]
        w = _weights(fx)
        nv[:] = 0.0
        nC[:, :] = 0.0
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    wt = w[i, 0] * w[j, 1] * w[k, 2]
                    dp0 = (i - fx[0]) * dx
                    dp1 = (j - fx[1]) * dx
                    dp2 = (k - fx[2]) * dx
                    a0, b0, c0 = base[0] + i, base[1] + j, base[2] + k
                    s4 = 4.0 * inv_dx * inv_dx * wt
                    for a in range(3):
                        g = grid_v[a0, b0, c0, a]
                        nv[a] += wt * g
                        nC[a, 0] += s4 * g * dp0
                        nC[a, 1] += s4 * g * dp1
                        nC[a, 2] += s4 * g * dp2
        for a in range(3):
            v[p, a] = nv[a]
            x[p, a] += dt * nv[a]
        Fp = F[p]
        for r in range(3):
            for q in range(3):
                Fn[r, q] = Fp[r, q] + dt * (nC[r, 0] * Fp[0, q] + nC[r, 1] * Fp[1, q] + nC[r, 2] * Fp[2, q])
        Fp[:, :] = Fn
        C[p] = nC


# ---------------------------------------------------------------------------
# stepping


@dataclass
class RigidBoundary:
    """Indenter pose and velocity for one step, plus its SDF in local frame."""

    sdf: SdfGrid
    pose: Pose
    lin: np.ndarray
    ang: np.ndarray


def grid_node_positions(state: MpmState) -> np.ndarray:
    axes = [state.origin[i] + state.spacing * np.arange(state.dims[i]) for i in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


def mpm_step(state: MpmState, dt: float, mat: Material, boundary: RigidBoundary | None = None,
             damping: float = 0.0) -> MpmState:
    """One explicit P2G / grid update / G2P step (in place; returns ``state``)."""
    state.grid_m[...] = 0.0
    grid_mv = np.zeros(state.dims + (3,))
    _p2g(state.x, state.v, state.m, state.V, state.F, state.C, state.origin, state.spacing, dt,
         mat.lame_mu, mat.lame_lambda, state.grid_m, grid_mv)
    has = state.grid_m > 0
    gv = np.zeros_like(grid_mv)
    gv[has] = grid_mv[has] / state.grid_m[has][:, None]
    if damping > 0:
        gv *= math.exp(-damping * dt)
    nodes = None
    if boundary is not None:
        idx = np.nonzero(has)
        nodes = state.origin + state.spacing * np.stack(idx, axis=1)
        local = boundary.pose.inverse_apply(nodes)
        d = sdf_query(boundary.sdf, local).d
        inside = d < 0
        if np.any(inside):
            r = nodes[inside] - np.asarray(boundary.pose.position)
            vel = boundary.lin + np.cross(boundary.ang, r)
            sel = tuple(a[inside] for a in idx)
            gv[sel] = vel
    # base: lowest layers under the pad do not move
    kz = int(math.floor((state.z_fixed - state.origin[2]) / state.spacing))
    gv[:, :, : kz + 1] = 0.0
    # domain walls
    gv[:2] = gv[-2:] = 0.0
    gv[:, :2] = gv[:, -2:] = 0.0
    gv[:, :, -2:] = 0.0
    state.grid_v = gv
    _g2p(state.x, state.v, state.F, state.C, state.origin, state.spacing, dt, gv)
    state.t += dt
    state.steps += 1
    return state


def mpm_explosion_guard(state: MpmState, vmax: float) -> tuple[MpmState, bool]:
    """Zero every particle velocity if any particle exceeds ``vmax``."""
    if not vmax > 0:
        raise ValueError("vmax must be positive")
    speed = np.linalg.norm(state.v, axis=1)
    if np.all(np.isfinite(speed)) and speed.max(initial=0.0) <= vmax:
        return state, False
    state.v[...] = 0.0
    state.C[...] = 0.0
    state.explosions += 1
    log.warning("mpm explosion guard triggered at t=%.4g (max speed %.3g)", state.t, np.nanmax(speed))
    return state, True


def mpm_marker_field(state: MpmState, tracked=None, frame_id: int = 0) -> MarkerField:
    tracked = state.tracked if tracked is None else np.asarray(tracked)
    if len(tracked) != ROWS * COLS:
        raise ValueError(f"need {ROWS * COLS} tracked particles, got {len(tracked)}")
    if tracked.min() < 0 or tracked.max() >= len(state.x):
        raise IndexError("tracked particle index out of range")
    d = state.x[tracked] - state.x_rest[tracked]
    return MarkerField(d[:, :2].reshape(ROWS, COLS, 2), frame_id, state.t, d[:, 2].reshape(ROWS, COLS))


def run_mpm_script(shell: SurfaceMesh, script: RigidScript, start: Pose, mat: Material | None = None,
                   cfg: MpmConfig | None = None, extent=DEFAULT_PAD_EXTENT, on_step=None):
    """Drive the MPM gel through a rigid script.

    Each frame moves the indenter over ``steps_per_frame`` steps at constant
    velocity, then holds for ``settle_steps``. Returns the per-frame marker
    fields and a diagnostics dict.
    """
    from ..rigid import relative_velocity

    mat = mat or Material()
    cfg = cfg or MpmConfig()
    state = init_mpm_state(extent, mat, cfg)
    dt = stable_dt(state, mat, cfg)
    sdf = build_sdf_grid(shell, (cfg.sdf_dims,) * 3, padding=2 * state.spacing)
    fields, mass_err, triggered = [], [], 0
    pose = start
    zero = np.zeros(3)
    for i, target in enumerate(script.poses):
        lin, ang = relative_velocity(pose, target, cfg.steps_per_frame * dt)
        for s in range(cfg.steps_per_frame + cfg.settle_steps):
            if s < cfg.steps_per_frame:
                cur = pose.interpolate(target, (s + 0.5) / cfg.steps_per_frame)
                bnd = RigidBoundary(sdf, cur, lin, ang)
            else:
                bnd = RigidBoundary(sdf, target, zero, zero)
            mpm_step(state, dt, mat, bnd, cfg.damping)
            mass_err.append(abs(state.grid_m.sum() - state.m.sum()) / state.m.sum())
            state, hit = mpm_explosion_guard(state, cfg.vmax)
            triggered += int(hit)
            if on_step is not None:
                on_step(state)
        pose = target
        fields.append(mpm_marker_field(state, frame_id=i))
    diag = {
        "dt": dt,
        "steps": state.steps,
        "n_particles": int(len(state.x)),
        "max_mass_rel_error": float(max(mass_err, default=0.0)),
        "explosions": triggered,
    }
    return fields, diag
