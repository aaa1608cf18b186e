"""Material calibration: fit (E, nu, rho, mu) to reference marker fields."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..energy import Material
from ..scene import Scene
from ..solver import SolverConfig
from ..tactile import field_mse
from .cmaes import cmaes_minimize

log = logging.getLogger(__name__)

PARAM_NAMES = ("E", "nu", "rho", "mu_f")
# calibration box in table units: Pa, -, g/mm^3, -
DEFAULT_BOUNDS = ((1e4, 2e5), (0.4, 0.497), (1e-3, 5e-3), (0.25, 2.5))


@dataclass
class IpcSequenceBuilder:
    """Simulates the calibration protocols for a parameter vector ``theta``.

    ``theta`` is ``(E [Pa], nu, rho [g/mm^3], mu)``. Picklable, so a
    generation can be evaluated on a process pool.
    """

    # every protocol yields the same frame count K
    protocols: tuple = (("cube", "press", 4), ("cube", "slide", 4))
    resolution: tuple = (8, 6, 1)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def scenes(self, theta) -> list:
        mat = Material.from_table_units(*theta)
        return [
            Scene(name=f"calib-{shape}-{mode}", shape=shape, mode=mode, resolution=self.resolution,
                  material=mat, solver=self.solver, n_frames=n)
            for shape, mode, n in self.protocols
        ]

    def __call__(self, theta) -> list:
        from ..harness import run_ipc

        return [run_ipc(sc).fields for sc in self.scenes(theta)]


@dataclass
class CalibrationProblem:
    theta_bounds: tuple
    reference: list  # N sequences of K marker fields
    sim_builder: Callable

    def __post_init__(self):
        b = np.asarray(self.theta_bounds, float)
        if b.shape != (4, 2) or np.any(b[:, 0] >= b[:, 1]):
            raise ValueError("theta_bounds must be four (lo, hi) pairs with lo < hi")
        if not self.reference or not all(len(s) for s in self.reference):
            raise ValueError("reference must hold at least one nonempty sequence")

    def loss(self, theta) -> float:
        """Field MSE between simulated and reference sequences; inf on failure."""
        try:
            sim = self.sim_builder(np.asarray(theta, float))
            return field_mse([list(s) for s in sim], [list(s) for s in self.reference])
        except Exception as exc:  # any failed candidate is just a bad candidate
            log.info("calibration candidate %s failed: %s", theta, exc)
            return float("inf")


def make_synthetic_problem(theta_true, builder: Callable | None = None, bounds=DEFAULT_BOUNDS) -> CalibrationProblem:
    builder = builder or IpcSequenceBuilder()
    return CalibrationProblem(tuple(map(tuple, bounds)), builder(np.asarray(theta_true, float)), builder)


@dataclass
class CalibrationResult:
    material: Material
    theta_star: np.ndarray
    loss_history: list
    popsize: int
    iters: int
    seed: int
    bounds: tuple
    evaluations: int = 0
    wall_time_s: float = 0.0

    def report(self) -> dict:
        return {
            "theta_star": dict(zip(PARAM_NAMES, map(float, self.theta_star))),
            "loss_history": [float(v) for v in self.loss_history],
            "popsize": self.popsize,
            "iters": self.iters,
            "seed": self.seed,
            "bounds": [list(b) for b in self.bounds],
            "evaluations": self.evaluations,
            "wall_time_s": self.wall_time_s,
        }


def calibrate_material(prob: CalibrationProblem, popsize: int = 12, iters: int = 80, seed: int = 0,
                       x0=None, sigma0: float = 0.3, evaluator=None, ftarget: float | None = None,
                       tolx: float = 1e-3) -> CalibrationResult:
    """CMA-ES over the normalized parameter box. ``x0`` is a start point in
    physical units (table convention); default is the box centre. The run ends
    early once the search spread drops below ``tolx`` of the box width."""
    b = np.asarray(prob.theta_bounds, float)
    x0n = None if x0 is None else (np.asarray(x0, float) - b[:, 0]) / (b[:, 1] - b[:, 0])
    t0 = time.perf_counter()
    out = cmaes_minimize(prob.loss, b, popsize, iters, seed, x0=x0n, sigma0=sigma0, evaluator=evaluator,
                         ftarget=ftarget, tolx=tolx)
    mat = Material.from_table_units(*out.theta_star)
    return CalibrationResult(mat, out.theta_star, out.loss_history, popsize, iters, seed,
                             tuple(map(tuple, prob.theta_bounds)), out.evaluations, time.perf_counter() - t0)
