"""Comparison tactile models: explicit MPM and SDF-penalty point sampling."""

from .mpm import MpmConfig, MpmState, init_mpm_state, mpm_explosion_guard, mpm_marker_field, mpm_step, run_mpm_script
from .penalty import (
    PenaltyTactileParams,
    TactilePointSet,
    force_to_pseudo_displacement,
    lattice_points,
    penalty_tactile,
    run_penalty_script,
)

__all__ = [
    "MpmConfig",
    "MpmState",
    "init_mpm_state",
    "mpm_step",
    "mpm_explosion_guard",
    "mpm_marker_field",
    "run_mpm_script",
    "PenaltyTactileParams",
    "TactilePointSet",
    "lattice_points",
    "penalty_tactile",
    "force_to_pseudo_displacement",
    "run_penalty_script",
]
