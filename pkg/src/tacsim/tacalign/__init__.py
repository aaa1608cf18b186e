"""Controller trajectory alignment, material calibration and randomization."""

from .calibration import CalibrationProblem, IpcSequenceBuilder, calibrate_material, make_synthetic_problem
from .cmaes import cmaes_minimize
from .control import (
    ImpedanceGains,
    PlantModel,
    Trajectory,
    alternate_align,
    impedance_force,
    rollout_plant,
    trajectory_discrepancy,
)
from .randomization import RandomizationConfig, sample_randomization

__all__ = [
    "CalibrationProblem",
    "IpcSequenceBuilder",
    "calibrate_material",
    "make_synthetic_problem",
    "cmaes_minimize",
    "ImpedanceGains",
    "PlantModel",
    "Trajectory",
    "alternate_align",
    "impedance_force",
    "rollout_plant",
    "trajectory_discrepancy",
    "RandomizationConfig",
    "sample_randomization",
]
