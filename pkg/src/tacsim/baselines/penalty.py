"""SDF penalty tactile model on sampled sensor points.

Each tactile point is moved into the indenter frame, its signed distance
``d`` and normal ``n`` are read from the SDF, and

    f_n = (-k_n d + k_d d_dot) n,     f_t = -v_t/|v_t| min(k_t |v_t|, mu |f_n|)

for penetrating points (``d < 0``). The tangential part of the total force
in the sensor plane stands in for a marker displacement field.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..geometry import DEFAULT_PAD_EXTENT, SdfGrid, SurfaceMesh, build_sdf_grid, sdf_query
from ..rigid import Pose, RigidScript, relative_velocity
from ..tactile import COLS, ROWS, MarkerField, marker_lattice


@dataclass(frozen=True)
class PenaltyTactileParams:
    k_n: float = 500.0
    k_d: float = 0.0
    k_t: float = 50.0
    mu: float = 1.0
    # rigid-body Kelvin-Voigt law constants, kept for completeness
    kv_kappa: float = 1e4
    kv_c: float = 10.0

    def __post_init__(self):
        for name in ("k_n", "k_d", "k_t", "mu", "kv_kappa", "kv_c"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class TactilePointSet:
    points: np.ndarray  # (P, 3) in the sensor frame
    f_n: np.ndarray = None
    f_t: np.ndarray = None
    flagged: np.ndarray = None
    shape: tuple = (ROWS, COLS)

    def __post_init__(self):
        self.points = np.asarray(self.points, float)
        n = len(self.points)
        if self.f_n is None:
            self.f_n = np.zeros((n, 3))
        if self.f_t is None:
            self.f_t = np.zeros((n, 3))
        if self.flagged is None:
            self.flagged = np.zeros(n, bool)

    @property
    def force(self) -> np.ndarray:
        return self.f_n + self.f_t


def lattice_points(extent=DEFAULT_PAD_EXTENT) -> TactilePointSet:
    X, Y, _ = extent
    pts = marker_lattice((-X / 2, -Y / 2), (X / 2, Y / 2), 0.0).reshape(-1, 3)
    return TactilePointSet(pts)


def penalty_tactile(points: TactilePointSet, sdf: SdfGrid, rel_pose: Pose, rel_lin, rel_ang,
                    params: PenaltyTactileParams) -> TactilePointSet:
    """Per-point penalty forces on the sensor, expressed in the sensor frame.

    ``rel_pose`` places the object in the sensor frame; ``rel_lin`` and
    ``rel_ang`` are the object's linear and angular velocity there. Points
    whose SDF gradient is degenerate get zero force and are flagged.
    """
    p = points.points
    local = rel_pose.inverse_apply(p)
    s = sdf_query(sdf, local)
    Rm = rel_pose.matrix()
    n = s.n @ Rm.T  # normals back in the sensor frame
    # velocity of the sensor point relative to the object surface, sensor frame
    r = p - np.asarray(rel_pose.position)
    v_rel = -(np.asarray(rel_lin, float) + np.cross(np.asarray(rel_ang, float), r))
    d_dot = np.einsum("ij,ij->i", n, v_rel)
    pen = (s.d < 0) & ~s.degenerate
    mag = np.where(pen, -params.k_n * s.d + params.k_d * d_dot, 0.0)
    f_n = mag[:, None] * n
    v_t = v_rel - d_dot[:, None] * n
    vt_norm = np.linalg.norm(v_t, axis=1)
    cap = np.minimum(params.k_t * vt_norm, params.mu * np.linalg.norm(f_n, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        dirn = np.where(vt_norm[:, None] > 0, v_t / np.where(vt_norm > 0, vt_norm, 1.0)[:, None], 0.0)
    f_t = np.where(pen[:, None], -dirn * cap[:, None], 0.0)
    # rounding in the unit direction can put |f_t| an ulp outside the cone
    limit = params.mu * np.linalg.norm(f_n, axis=1)
    over = np.linalg.norm(f_t, axis=1) > limit
    while over.any():
        f_t[over] *= 1.0 - 2.0**-52
        over = np.linalg.norm(f_t, axis=1) > limit
    return replace(points, f_n=f_n, f_t=f_t, flagged=s.degenerate.copy())


def tangential_forces(points: TactilePointSet) -> np.ndarray:
    return points.force[:, :2].reshape(ROWS, COLS, 2)


def force_to_pseudo_displacement(points: TactilePointSet, scale: float, frame_id: int = 0) -> MarkerField:
    """Tangential force field times a global constant (see :func:`normalization_scale`)."""
    return MarkerField(scale * tangential_forces(points), frame_id)


def normalization_scale(ref_points: TactilePointSet, ref_max_u: float) -> float:
    """Constant mapping the reference press's largest tangential force onto
    the reference model's largest marker displacement."""
    fmax = float(np.max(np.linalg.norm(tangential_forces(ref_points), axis=-1)))
    return ref_max_u / fmax if fmax > 0 else 0.0


def run_penalty_script(shell: SurfaceMesh, script: RigidScript, start: Pose, params: PenaltyTactileParams | None = None,
                       frame_dt: float = 5e-3, extent=DEFAULT_PAD_EXTENT, sdf_dims: int = 40,
                       sdf: SdfGrid | None = None):
    """Point sets (with forces) for every script frame."""
    params = params or PenaltyTactileParams()
    sdf = sdf if sdf is not None else build_sdf_grid(shell, (sdf_dims,) * 3, padding=0.002)
    base = lattice_points(extent)
    out = []
    prev = start
    for pose in script.poses:
        lin, ang = relative_velocity(prev, pose, frame_dt)
        out.append(penalty_tactile(base, sdf, pose, lin, ang, params))
        prev = pose
    return out, sdf
