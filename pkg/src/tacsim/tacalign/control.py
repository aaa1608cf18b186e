"""Impedance-controlled end-effector plants and trajectory alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .cmaes import cmaes_minimize

MOTIONS = ("tx", "ty", "tz", "rx", "ry", "rz")
TRANS_THRESHOLD_MM = 3.0
ROT_THRESHOLD_DEG = 0.5


@dataclass(frozen=True)
class ImpedanceGains:
    kp: tuple  # 3 translational (N/m) then 3 rotational (N m/rad)

    def __post_init__(self):
        kp = np.asarray(self.kp, float)
        if kp.shape != (6,) or not np.all(kp > 0):
            raise ValueError(f"kp must be six positive values, got {self.kp}")
        object.__setattr__(self, "kp", tuple(float(v) for v in kp))

    @property
    def kd(self) -> np.ndarray:
        """Critical damping for unit inertia."""
        return 2.0 * np.sqrt(np.asarray(self.kp))

    @classmethod
    def from_pair(cls, trans: float, rot: float) -> "ImpedanceGains":
        return cls((trans,) * 3 + (rot,) * 3)

    @property
    def pair(self) -> tuple:
        return self.kp[0], self.kp[3]


def rotation_error(p_targ, p_ee) -> np.ndarray:
    """Axis-angle vector of R_targ R_ee^T (minimal rotation)."""
    rt = Rotation.from_rotvec(np.asarray(p_targ, float)[3:])
    re = Rotation.from_rotvec(np.asarray(p_ee, float)[3:])
    return (rt * re.inv()).as_rotvec()


def impedance_force(g: ImpedanceGains, p_targ, p_ee, v_ee) -> np.ndarray:
    """``kp * (p_targ - p_ee) - kd * v_ee`` element-wise; rotations as rotation vectors."""
    p_targ = np.asarray(p_targ, float)
    p_ee = np.asarray(p_ee, float)
    err = np.concatenate([p_targ[:3] - p_ee[:3], rotation_error(p_targ, p_ee)])
    return np.asarray(g.kp) * err - g.kd * np.asarray(v_ee, float)


@dataclass(frozen=True)
class PlantModel:
    inertia: tuple = (1.0,) * 6
    extra_damping: tuple = (0.0,) * 6
    delay_steps: int = 0
    dt: float = 1e-3

    def __post_init__(self):
        if len(self.inertia) != 6 or min(self.inertia) <= 0:
            raise ValueError("inertia must hold six positive values")
        if len(self.extra_damping) != 6 or min(self.extra_damping) < 0:
            raise ValueError("extra_damping must hold six non-negative values")
        if self.delay_steps < 0:
            raise ValueError("delay_steps must be >= 0")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def to_dict(self) -> dict:
        return {"inertia": list(self.inertia), "extra_damping": list(self.extra_damping),
                "delay_steps": self.delay_steps, "dt": self.dt}

    @classmethod
    def from_dict(cls, d: dict) -> "PlantModel":
        return cls(tuple(d.get("inertia", (1.0,) * 6)), tuple(d.get("extra_damping", (0.0,) * 6)),
                   int(d.get("delay_steps", 0)), float(d.get("dt", 1e-3)))


@dataclass(frozen=True)
class MotionSpec:
    trans_amplitude: float = 0.05  # m
    rot_amplitude: float = math.radians(10.0)  # rad
    ramp_steps: int = 100
    steps: int = 400


@dataclass
class Trajectory:
    poses: np.ndarray  # (T, 6): position (m) and rotation vector (rad)

    def __post_init__(self):
        self.poses = np.asarray(self.poses, float)
        if self.poses.ndim != 2 or self.poses.shape[1] != 6 or len(self.poses) < 2:
            raise ValueError("trajectory must be (T >= 2, 6)")
        if not np.all(np.isfinite(self.poses)):
            raise ValueError("trajectory has non-finite poses")


def target_profile(motion: str, spec: MotionSpec) -> np.ndarray:
    if motion not in MOTIONS:
        raise ValueError(f"unknown motion {motion!r}; expected one of {MOTIONS}")
    axis = MOTIONS.index(motion)
    amp = spec.trans_amplitude if axis < 3 else spec.rot_amplitude
    s = np.minimum(np.arange(1, spec.steps + 1) / max(spec.ramp_steps, 1), 1.0)
    targ = np.zeros((spec.steps, 6))
    targ[:, axis] = amp * s
    return targ


def _rollout_axes(plant: PlantModel, kp: np.ndarray, targ: np.ndarray) -> np.ndarray:
    """Decoupled per-axis double integrators, semi-implicit Euler.

    Single-axis canonical motions keep the rotation about one fixed axis, so
    the rotation-vector error reduces to the angle difference on that axis.
    """
    m = np.asarray(plant.inertia)
    c = np.asarray(plant.extra_damping)
    kd = 2.0 * np.sqrt(kp)
    dt = plant.dt
    T = len(targ)
    x = np.zeros(targ.shape[1:])
    v = np.zeros_like(x)
    queue = [np.zeros_like(x)] * plant.delay_steps
    out = np.empty_like(targ)
    for t in range(T):
        f = kp * (targ[t] - x) - kd * v
        queue.append(f)
        f_applied = queue.pop(0)
        v = v + dt * (f_applied - c * v) / m
        x = x + dt * v
        out[t] = x
    return out


def rollout_plant(plant: PlantModel, g: ImpedanceGains, motion: str, T: int | None = None,
                  spec: MotionSpec | None = None) -> Trajectory:
    spec = spec or MotionSpec()
    if T is not None:
        spec = MotionSpec(spec.trans_amplitude, spec.rot_amplitude, spec.ramp_steps, int(T))
    targ = target_profile(motion, spec)
    return Trajectory(_rollout_axes(plant, np.asarray(g.kp), targ))


def rollout_all(plant: PlantModel, g: ImpedanceGains, spec: MotionSpec | None = None) -> np.ndarray:
    """All six canonical motions at once, shape (6, T, 6)."""
    spec = spec or MotionSpec()
    targ = np.stack([target_profile(m, spec) for m in MOTIONS], axis=1)  # (T, 6 motions, 6)
    return np.transpose(_rollout_axes(plant, np.asarray(g.kp), targ), (1, 0, 2))


@dataclass
class Discrepancy:
    D_trans: float  # mm^2
    D_rot: float  # deg^2

    @property
    def rms_trans_mm(self) -> float:
        return math.sqrt(self.D_trans)

    @property
    def rms_rot_deg(self) -> float:
        return math.sqrt(self.D_rot)


def _geodesic_deg(ra: np.ndarray, rb: np.ndarray) -> np.ndarray:
    rel = Rotation.from_rotvec(ra.reshape(-1, 3)) * Rotation.from_rotvec(rb.reshape(-1, 3)).inv()
    return np.degrees(np.linalg.norm(rel.as_rotvec(), axis=1)).reshape(ra.shape[:-1])


def trajectory_discrepancy(a, b) -> Discrepancy:
    """Mean over time of squared translational (mm) and geodesic rotational (deg) error."""
    pa = a.poses if isinstance(a, Trajectory) else np.asarray(a, float)
    pb = b.poses if isinstance(b, Trajectory) else np.asarray(b, float)
    if pa.shape != pb.shape:
        raise ValueError(f"trajectory lengths differ: {pa.shape} vs {pb.shape}")
    dt = np.sum((1e3 * (pa[..., :3] - pb[..., :3])) ** 2, axis=-1)
    dr = _geodesic_deg(pa[..., 3:], pb[..., 3:]) ** 2
    return Discrepancy(float(np.mean(dt)), float(np.mean(dr)))


def mean_discrepancy(plant_sim: PlantModel, g_sim: ImpedanceGains, plant_real: PlantModel, g_real: ImpedanceGains,
                     spec: MotionSpec | None = None, real_traj=None) -> Discrepancy:
    """D averaged over the six canonical motions."""
    a = rollout_all(plant_sim, g_sim, spec)
    b = rollout_all(plant_real, g_real, spec) if real_traj is None else real_traj
    return trajectory_discrepancy(a, b)


def alignment_loss(d: Discrepancy) -> float:
    """Scalar objective: squared RMS errors normalized by the success thresholds."""
    return d.D_trans / TRANS_THRESHOLD_MM**2 + d.D_rot / ROT_THRESHOLD_DEG**2


@dataclass
class AlignResult:
    kp_sim: ImpedanceGains
    kp_real: ImpedanceGains
    gain_history: list = field(default_factory=list)
    D_trans_history_mm: list = field(default_factory=list)
    D_rot_history_deg: list = field(default_factory=list)
    loss_history: list = field(default_factory=list)

    def report(self) -> dict:
        return {
            "kp_sim": list(self.kp_sim.pair),
            "kp_real": list(self.kp_real.pair),
            "gain_history": self.gain_history,
            "D_trans_history_mm": self.D_trans_history_mm,
            "D_rot_history_deg": self.D_rot_history_deg,
        }


def alternate_align(plant_sim: PlantModel, plant_real: PlantModel, init: tuple, rounds: int = 3,
                    gain_box=((50.0, 5000.0), (5.0, 500.0)), popsize: int = 12, iters: int = 40, seed: int = 0,
                    spec: MotionSpec | None = None) -> AlignResult:
    """Alternately fit the sim gains to the real closed loop and vice versa.

    ``init`` is ``((kp_trans_sim, kp_rot_sim), (kp_trans_real, kp_rot_real))``.
    Each half-round runs CMA-ES over log gains in ``gain_box`` with the other
    side held; the best pair so far is kept, so the D history never rises.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    spec = spec or MotionSpec()
    g_sim = ImpedanceGains.from_pair(*init[0])
    g_real = ImpedanceGains.from_pair(*init[1])
    logbox = np.log(np.asarray(gain_box, float))

    def record(res: AlignResult, d: Discrepancy):
        res.gain_history.append([list(g_sim.pair), list(g_real.pair)])
        res.D_trans_history_mm.append(d.rms_trans_mm)
        res.D_rot_history_deg.append(d.rms_rot_deg)
        res.loss_history.append(alignment_loss(d))

    res = AlignResult(g_sim, g_real)
    best = mean_discrepancy(plant_sim, g_sim, plant_real, g_real, spec)
    record(res, best)
    for r in range(rounds):
        for side in ("sim", "real"):
            if alignment_loss(best) == 0.0:
                break
            fixed_traj = rollout_all(plant_real, g_real, spec) if side == "sim" else rollout_all(plant_sim, g_sim, spec)

            def objective(logk, side=side, fixed_traj=fixed_traj):
                g = ImpedanceGains.from_pair(*np.exp(logk))
                plant = plant_sim if side == "sim" else plant_real
                return alignment_loss(trajectory_discrepancy(rollout_all(plant, g, spec), fixed_traj))

            cur = g_sim if side == "sim" else g_real
            x0 = (np.log(cur.pair) - logbox[:, 0]) / (logbox[:, 1] - logbox[:, 0])
            out = cmaes_minimize(objective, logbox, popsize, iters, seed + 2 * r + (side == "real"), x0=x0, sigma0=0.1)
            if out.f_best < alignment_loss(best):
                cand = ImpedanceGains.from_pair(*np.exp(out.theta_star))
                if side == "sim":
                    g_sim = cand
                else:
                    g_real = cand
                best = mean_discrepancy(plant_sim, g_sim, plant_real, g_real, spec)
            record(res, best)
    res.kp_sim, res.kp_real = g_sim, g_real
    return res


def default_plants() -> tuple:
    """Bundled scenario: the real plant adds damping and a 2-step actuation delay."""
    sim = PlantModel()
    real = PlantModel(extra_damping=(8.0,) * 3 + (0.5,) * 3, delay_steps=2)
    return sim, real


def gain_distance_study(n_pairs: int = 20, seed: int = 0, spec: MotionSpec | None = None) -> dict:
    """Random gain pairs: gain distance versus trajectory distance."""
    rng = np.random.default_rng(seed)
    plant = PlantModel()
    gd, td = [], []
    for _ in range(n_pairs):
        a = ImpedanceGains.from_pair(rng.uniform(200, 1000), rng.uniform(10, 100))
        b = ImpedanceGains.from_pair(rng.uniform(200, 1000), rng.uniform(10, 100))
        gd.append(float(np.linalg.norm(np.subtract(a.pair, b.pair))))
        td.append(mean_discrepancy(plant, a, plant, b, spec).rms_trans_mm)
    r = float(np.corrcoef(gd, td)[0, 1])
    return {"gain_distance": gd, "trajectory_rms_mm": td, "pearson_r": r}
