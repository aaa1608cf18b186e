"""Domain-randomization sampling for insertion environments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# name -> (lo, hi) in SI units (m, rad); ranges with lo == hi are constants
EPISODE_RANGES = {
    "kp": (400.0, 800.0),
    "peg_friction": (0.5, 1.0),
    "socket_x": (0.5975, 0.6925),
    "socket_y": (-0.0025, 0.0025),
    "socket_z": (0.0475, 0.0525),
    "holding_x": (-0.003, 0.003),
    "holding_z": (-0.003, 0.003),
    "holding_rot_y": (math.radians(-35.0), math.radians(35.0)),
    "hand_x": (-0.02, 0.02),
    "hand_y": (-0.02, 0.02),
    "hand_z": (0.065, 0.085),
    "hand_rot_x": (3.1415, 3.1415),
    "hand_rot_y": (0.0, 0.0),
    "hand_rot_z": (-0.785, 0.785),
}

# per-step observation noise half-widths
STEP_NOISE = {
    "ee_trans": 0.005,  # m
    "ee_rot": 0.2,  # rad
    "ipc_move_trans": 0.001,  # m
    "ipc_move_rot": 0.05,  # rad
}


@dataclass
class RandomizationConfig:
    ranges: dict = field(default_factory=lambda: dict(EPISODE_RANGES))
    step_noise: dict = field(default_factory=lambda: dict(STEP_NOISE))

    def __post_init__(self):
        for k, v in self.ranges.items():
            lo, hi = (float(a) for a in v)
            if not lo <= hi:
                raise ValueError(f"range {k!r} has lo > hi: {v}")
            self.ranges[k] = (lo, hi)
        for k, v in self.step_noise.items():
            if float(v) < 0:
                raise ValueError(f"noise {k!r} must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "RandomizationConfig":
        ranges = dict(EPISODE_RANGES)
        ranges.update({k: tuple(v) for k, v in d.get("ranges", {}).items()})
        noise = dict(STEP_NOISE)
        noise.update({k: float(v) for k, v in d.get("step_noise", {}).items()})
        return cls(ranges, noise)


def sample_randomization(cfg: RandomizationConfig, seed: int) -> dict:
    """One environment record: episode-level draws plus per-step noise scales."""
    rng = np.random.default_rng(seed)
    episode = {k: float(rng.uniform(lo, hi)) if hi > lo else lo for k, (lo, hi) in sorted(cfg.ranges.items())}
    return {
        "seed": int(seed),
        "episode": episode,
        "per_step": {k: {"half_width": float(v)} for k, v in sorted(cfg.step_noise.items())},
    }


def sample_many(cfg: RandomizationConfig, seed: int, count: int) -> list:
    """``count`` records with child seeds derived from ``seed``."""
    if count < 0:
        raise ValueError("count must be >= 0")
    seeds = np.random.SeedSequence(seed).generate_state(count) if count else []
    return [sample_randomization(cfg, int(s)) for s in seeds]


def step_noise(record: dict, rng: np.random.Generator) -> dict:
    """Per-step observation noise draw, uniform in each half-width."""
    out = {}
    for k, spec in record["per_step"].items():
        w = spec["half_width"]
        out[k] = rng.uniform(-w, w, size=3).tolist()
    return out
