"""HTTP front end over the command handlers.

Run with ``tacsim serve`` or ``uvicorn tacsim.service:app``. Output paths
in requests refer to the server's filesystem.
"""

from __future__ import annotations

from typing import Any, Literal, Optional

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__, handlers
from .harness import SolverFailure
from .protocols import MODES, SHAPES

Shape = Literal["cube", "cylinder", "moon", "triangle"]
Mode = Literal["press", "slide", "rotate"]
Model = Literal["ipc", "mpm", "penalty"]

assert set(SHAPES) == set(Shape.__args__) and set(MODES) == set(Mode.__args__)


class OutDir(BaseModel):
    out_dir: Optional[str] = None


class SimulateRequest(OutDir):
    scene: dict[str, Any]
    base_dir: Optional[str] = None


class IndentRequest(OutDir):
    shape: Shape = "cube"
    mode: Mode = "press"
    model: Model = "ipc"
    resolution: Optional[list[int]] = Field(default=None, min_length=3, max_length=3)
    retract: bool = False


class BatchRequest(OutDir):
    spec: dict[str, Any]
    workers: Optional[int] = Field(default=None, ge=1)
    base_dir: Optional[str] = None


class CompareRequest(OutDir):
    scene: dict[str, Any]
    models: list[Model] = Field(min_length=2)
    base_dir: Optional[str] = None


class CalibrateRequest(OutDir):
    problem: dict[str, Any]
    base_dir: Optional[str] = None


class AlignRequest(OutDir):
    plants: dict[str, Any] = Field(default_factory=dict)


class RandomizeRequest(OutDir):
    config: dict[str, Any] = Field(default_factory=dict)
    seed: int = 0
    count: int = Field(default=1, ge=0)


class BenchRequest(OutDir):
    envs: int = Field(default=8, ge=1)
    workers: Optional[int] = Field(default=None, ge=1)


class RunResponse(BaseModel):
    ok: bool = True
    result: dict[str, Any]


class ErrorResponse(BaseModel):
    ok: bool = False
    kind: Literal["invalid_input", "solver_failure"]
    error: str


app = FastAPI(title="tacsim", version=__version__)


@app.exception_handler(handlers.InputError)
async def _bad_input(request, exc):
    return JSONResponse(status_code=400, content=ErrorResponse(kind="invalid_input", error=str(exc)).model_dump())


@app.exception_handler(SolverFailure)
async def _solver_failed(request, exc):
    return JSONResponse(status_code=500, content=ErrorResponse(kind="solver_failure", error=str(exc)).model_dump())


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


# plain ``def`` endpoints run in the threadpool, so long solves don't block the loop
@app.post("/simulate", response_model=RunResponse)
def simulate(req: SimulateRequest):
    return RunResponse(result=handlers.simulate(req.scene, req.out_dir, req.base_dir))


@app.post("/indent", response_model=RunResponse)
def indent(req: IndentRequest):
    return RunResponse(result=handlers.indent(req.shape, req.mode, req.model, req.out_dir, req.resolution, req.retract))


@app.post("/batch", response_model=RunResponse)
def batch(req: BatchRequest):
    return RunResponse(result=handlers.batch(req.spec, req.workers, req.out_dir, req.base_dir))


@app.post("/compare", response_model=RunResponse)
def compare(req: CompareRequest):
    return RunResponse(result=handlers.compare(req.scene, list(req.models), req.out_dir, req.base_dir))


@app.post("/calibrate", response_model=RunResponse)
def calibrate(req: CalibrateRequest):
    return RunResponse(result=handlers.calibrate(req.problem, req.out_dir, req.base_dir))


@app.post("/align-control", response_model=RunResponse)
def align_control(req: AlignRequest):
    return RunResponse(result=handlers.align_control(req.plants, req.out_dir))


@app.post("/randomize", response_model=RunResponse)
def randomize(req: RandomizeRequest):
    return RunResponse(result=handlers.randomize(req.config, req.seed, req.count, req.out_dir))


@app.post("/bench", response_model=RunResponse)
def bench(req: BenchRequest):
    return RunResponse(result=handlers.run_bench(req.envs, req.workers, req.out_dir))
