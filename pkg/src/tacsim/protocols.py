"""Indentation protocols: press, slide and rotate."""

from __future__ import annotations

import numpy as np

from .rigid import Pose, RigidScript

SHAPES = ("cube", "cylinder", "moon", "triangle")
MODES = ("press", "slide", "rotate")

STEP_MM = 0.1
PRELOAD_MM = 0.5
ROT_STEP_DEG = 0.5


def start_pose(dhat: float = 1e-4) -> Pose:
    """Pressing face one barrier width above the undeformed top face."""
    return Pose((0.0, 0.0, dhat))


def make_indentation_script(mode: str, shape: str = "cube", *, dhat: float = 1e-4, frame_dt: float = 1.0,
                            n_frames: int | None = None, retract: bool = False) -> RigidScript:
    """Scripted indenter poses for one protocol.

    press: ``n_frames`` (10) frames of 0.1 mm normal travel.
    slide: 0.5 mm preload, then 10 frames of 0.1 mm along +x.
    rotate: 0.5 mm preload, then 4 frames of 0.5 deg about the normal.
    ``retract`` appends one frame lifting the indenter back to its start.
    The shape only matters to the caller; it is validated here so bad
    scene files fail early.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    step = STEP_MM * 1e-3
    z0 = start_pose(dhat).position[2]
    poses = []
    n_pre = 0
    if mode == "press":
        n = 10 if n_frames is None else n_frames
        poses = [Pose((0.0, 0.0, z0 - step * (k + 1))) for k in range(n)]
    else:
        zp = z0 - PRELOAD_MM * 1e-3
        poses.append(Pose((0.0, 0.0, zp)))
        n_pre = 1
        if mode == "slide":
            n = 10 if n_frames is None else n_frames
            poses += [Pose((step * (k + 1), 0.0, zp)) for k in range(n)]
        else:
            n = 4 if n_frames is None else n_frames
            poses += [Pose.from_euler((0.0, 0.0, zp), (0.0, 0.0, ROT_STEP_DEG * (k + 1))) for k in range(n)]
    if retract:
        last = poses[-1]
        poses.append(Pose((last.position[0], last.position[1], z0), last.quat))
    times = list(frame_dt * (np.arange(len(poses)) + 1))
    return RigidScript(poses, times, n_pre)
