"""Scene description and JSON loading with explicit length units."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .baselines.mpm import MpmConfig
from .baselines.penalty import PenaltyTactileParams
from .energy import BarrierParams, FrictionParams, Material
from .geometry import DEFAULT_PAD_EXTENT, SurfaceMesh, TetMesh, build_gel_pad, load_obj, load_tet, make_indenter
from .protocols import MODES, SHAPES, make_indentation_script
from .rigid import RigidScript
from .solver import SolverConfig

MODELS = ("ipc", "mpm", "penalty")
UNITS = {"m": 1.0, "mm": 1e-3, "cm": 1e-2}


class SceneError(ValueError):
    """Invalid scene description."""


def length(value, what: str) -> float | list:
    """Convert a unit-tagged length ``{"value": v, "unit": "mm"}`` to meters."""
    if isinstance(value, dict):
        if "unit" not in value or "value" not in value:
            raise SceneError(f"{what}: length needs 'value' and 'unit'")
        unit = value["unit"]
        if unit not in UNITS:
            raise SceneError(f"{what}: unknown unit {unit!r} (use one of {sorted(UNITS)})")
        v = value["value"]
        if isinstance(v, (list, tuple)):
            return [float(a) * UNITS[unit] for a in v]
        return float(v) * UNITS[unit]
    raise SceneError(f"{what}: lengths must carry a unit tag, e.g. {{\"value\": 1, \"unit\": \"mm\"}}")


def tagged(v: float | list, unit: str = "mm") -> dict:
    s = UNITS[unit]
    if isinstance(v, (list, tuple)):
        return {"value": [float(a) / s for a in v], "unit": unit}
    return {"value": float(v) / s, "unit": unit}


@dataclass
class Scene:
    name: str = "scene"
    shape: str = "cube"
    mode: str = "press"
    model: str = "ipc"
    extent: tuple = DEFAULT_PAD_EXTENT
    resolution: tuple = (16, 12, 2)
    indenter_size: float = 0.008
    indenter_height: float = 0.006
    material: Material = field(default_factory=Material)
    solver: SolverConfig = field(default_factory=SolverConfig)
    mpm: MpmConfig = field(default_factory=MpmConfig)
    penalty: PenaltyTactileParams = field(default_factory=PenaltyTactileParams)
    penalty_ref_max_u: float | None = None
    script: RigidScript | None = None
    n_frames: int | None = None
    retract: bool = False
    settle_steps: int = 0
    gel_mesh: str | None = None
    indenter_mesh: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise SceneError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if self.mode not in MODES:
            raise SceneError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.model not in MODELS:
            raise SceneError(f"unknown model {self.model!r}; expected one of {MODELS}")
        for p in (self.gel_mesh, self.indenter_mesh):
            if p is not None and not Path(p).exists():
                raise SceneError(f"referenced file does not exist: {p}")
        if min(self.resolution) < 1 or min(self.extent) <= 0:
            raise SceneError("pad extent and resolution must be positive")

    def build_mesh(self) -> TetMesh:
        if self.gel_mesh:
            return load_tet(self.gel_mesh)
        return build_gel_pad(tuple(self.extent), tuple(self.resolution))

    def build_shell(self) -> SurfaceMesh:
        if self.indenter_mesh:
            return load_obj(self.indenter_mesh)
        return make_indenter(self.shape, self.indenter_size, self.indenter_height)

    def build_script(self) -> RigidScript:
        if self.script is not None:
            return self.script
        return make_indentation_script(self.mode, self.shape, dhat=self.solver.barrier.dhat,
                                       frame_dt=self.solver.h, n_frames=self.n_frames, retract=self.retract)

    def to_dict(self) -> dict:
        s = self.solver
        out = {
            "name": self.name,
            "shape": self.shape,
            "mode": self.mode,
            "model": self.model,
            "seed": self.seed,
            "pad": {"extent": tagged(list(self.extent)), "resolution": list(self.resolution)},
            "indenter": {"size": tagged(self.indenter_size), "height": tagged(self.indenter_height)},
            "material": {"E": self.material.E, "nu": self.material.nu, "rho": self.material.rho,
                         "mu_f": self.material.mu_f},
            "solver": {
                "h": s.h, "max_iters": s.max_iters, "tol_dx": tagged(s.tol_dx, "m"),
                "dhat": tagged(s.barrier.dhat, "m"), "kappa": s.barrier.kappa,
                "eps_v": tagged(s.friction.eps_v, "m"), "gravity": s.gravity,
            },
            "mpm": asdict(self.mpm),
            "penalty": asdict(self.penalty),
            "retract": self.retract,
            "settle_steps": self.settle_steps,
        }
        if self.n_frames is not None:
            out["n_frames"] = self.n_frames
        if self.penalty_ref_max_u is not None:
            out["penalty_ref_max_u"] = tagged(self.penalty_ref_max_u, "m")
        if self.script is not None:
            d = self.script.to_dict()
            d["unit"] = "m"
            out["script"] = d
        if self.gel_mesh:
            out["pad"]["mesh"] = self.gel_mesh
        if self.indenter_mesh:
            out["indenter"]["mesh"] = self.indenter_mesh
        return out


def _material(d: dict) -> Material:
    d = dict(d)
    rho_unit = d.pop("rho_unit", "kg/m3")
    if rho_unit == "g/mm3":
        return Material.from_table_units(d.get("E", 5e4), d.get("nu", 0.45), d.get("rho", 1.2e-3), d.get("mu_f", 1.0))
    if rho_unit != "kg/m3":
        raise SceneError(f"material.rho_unit must be 'kg/m3' or 'g/mm3', got {rho_unit!r}")
    return Material(**{k: float(v) for k, v in d.items()})


def scene_from_dict(data: dict, base_dir: str | Path | None = None) -> Scene:
    """Parse a scene JSON object. Relative mesh paths resolve against ``base_dir``."""
    try:
        return _parse_scene(data, base_dir)
    except SceneError:
        raise
    except (TypeError, ValueError, KeyError, AttributeError) as exc:
        raise SceneError(f"invalid scene: {exc}") from exc


def _parse_scene(data: dict, base_dir) -> Scene:
    if not isinstance(data, dict):
        raise SceneError("scene must be a JSON object")
    base = Path(base_dir) if base_dir else Path.cwd()
    kw: dict = {}
    for key in ("name", "shape", "mode", "model"):
        if key in data:
            kw[key] = str(data[key])
    for key in ("seed", "settle_steps", "n_frames"):
        if key in data:
            kw[key] = int(data[key])
    if "retract" in data:
        kw["retract"] = bool(data["retract"])
    pad = data.get("pad", {})
    if "extent" in pad:
        ext = length(pad["extent"], "pad.extent")
        if not isinstance(ext, list) or len(ext) != 3:
            raise SceneError("pad.extent must hold three lengths")
        kw["extent"] = tuple(ext)
    if "resolution" in pad:
        kw["resolution"] = tuple(int(v) for v in pad["resolution"])
    if "mesh" in pad:
        kw["gel_mesh"] = str(base / pad["mesh"])
    ind = data.get("indenter", {})
    if "size" in ind:
        kw["indenter_size"] = length(ind["size"], "indenter.size")
    if "height" in ind:
        kw["indenter_height"] = length(ind["height"], "indenter.height")
    if "mesh" in ind:
        kw["indenter_mesh"] = str(base / ind["mesh"])
    if "material" in data:
        kw["material"] = _material(data["material"])
    sv = data.get("solver", {})
    if sv:
        bp = BarrierParams(
            dhat=length(sv["dhat"], "solver.dhat") if "dhat" in sv else BarrierParams.dhat,
            kappa=float(sv.get("kappa", BarrierParams.kappa)),
        )
        fp = FrictionParams(eps_v=length(sv["eps_v"], "solver.eps_v") if "eps_v" in sv else FrictionParams.eps_v)
        opts = {}
        if "h" in sv:
            opts["h"] = float(sv["h"])
        if "max_iters" in sv:
            opts["max_iters"] = int(sv["max_iters"])
        if "tol_dx" in sv:
            opts["tol_dx"] = length(sv["tol_dx"], "solver.tol_dx")
        if "gravity" in sv:
            opts["gravity"] = bool(sv["gravity"])
        kw["solver"] = SolverConfig(barrier=bp, friction=fp, **opts)
    if "mpm" in data:
        kw["mpm"] = MpmConfig(**data["mpm"])
    if "penalty" in data:
        kw["penalty"] = PenaltyTactileParams(**data["penalty"])
    if "penalty_ref_max_u" in data:
        kw["penalty_ref_max_u"] = length(data["penalty_ref_max_u"], "penalty_ref_max_u")
    if "script" in data:
        sc = data["script"]
        unit = sc.get("unit")
        if unit not in UNITS:
            raise SceneError("script.unit must be given ('mm' or 'm')")
        kw["script"] = RigidScript.from_dict(sc, UNITS[unit])
    return Scene(**kw)


def load_scene(path) -> Scene:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneError(f"cannot read scene {path}: {exc}") from exc
    return scene_from_dict(data, path.parent)
