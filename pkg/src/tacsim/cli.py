"""Command-line entry point.

Every subcommand runs in-process through :mod:`tacsim.handlers` unless
``--server URL`` is given, in which case the request is posted to a running
``tacsim serve`` instance. Exit codes: 0 success, 2 invalid input,
3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, handlers
from .harness import SolverFailure

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _models(text: str) -> list:
    return [m.strip() for m in text.split(",") if m.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="output directory (default ./tacsim_out)")
    common.add_argument("--server", default=None, metavar="URL", help="post the request to a tacsim service")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="tacsim", description="Tactile contact simulation harness.")
    p.add_argument("--version", action="version", version=f"tacsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="run one scene file")
    s.add_argument("scene")

    s = sub.add_parser("indent", parents=[common], help="run a bundled indentation protocol")
    s.add_argument("--shape", default="cube", choices=["cube", "cylinder", "moon", "triangle"])
    s.add_argument("--mode", default="press", choices=["press", "slide", "rotate"])
    s.add_argument("--model", default="ipc", choices=["ipc", "mpm", "penalty"])
    s.add_argument("--resolution", type=int, nargs=3, default=None, metavar=("NX", "NY", "NZ"))
    s.add_argument("--retract", action="store_true")

    s = sub.add_parser("batch", parents=[common], help="run a batch spec on a worker pool")
    s.add_argument("spec")
    s.add_argument("--workers", type=int, default=None)

    s = sub.add_parser("compare", parents=[common], help="run one scene through several models")
    s.add_argument("scene")
    s.add_argument("--models", type=_models, default=["ipc", "mpm", "penalty"])

    s = sub.add_parser("calibrate", parents=[common], help="fit material parameters with CMA-ES")
    s.add_argument("problem")

    s = sub.add_parser("align-control", parents=[common], help="align impedance gains between two plants")
    s.add_argument("plants", nargs="?", default=None)

    s = sub.add_parser("randomize", parents=[common], help="sample domain-randomization records")
    s.add_argument("config", nargs="?", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=1)

    s = sub.add_parser("bench", parents=[common], help="measure batch throughput")
    s.add_argument("--envs", type=int, default=8)
    s.add_argument("--workers", type=int, default=None)

    s = sub.add_parser("serve", help="start the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    return p


def _read(path) -> dict:
    return handlers._load_json(path)


def _request(args) -> tuple[str, dict]:
    """Endpoint and JSON body for ``--server`` mode; files are read locally."""
    out = {"out_dir": args.out}
    c = args.command
    if c == "simulate":
        return "/simulate", {"scene": _read(args.scene), "base_dir": str(Path(args.scene).resolve().parent), **out}
    if c == "indent":
        return "/indent", {"shape": args.shape, "mode": args.mode, "model": args.model,
                           "resolution": args.resolution, "retract": args.retract, **out}
    if c == "batch":
        return "/batch", {"spec": _read(args.spec), "workers": args.workers,
                          "base_dir": str(Path(args.spec).resolve().parent), **out}
    if c == "compare":
        return "/compare", {"scene": _read(args.scene), "models": args.models,
                            "base_dir": str(Path(args.scene).resolve().parent), **out}
    if c == "calibrate":
        return "/calibrate", {"problem": _read(args.problem),
                              "base_dir": str(Path(args.problem).resolve().parent), **out}
    if c == "align-control":
        return "/align-control", {"plants": _read(args.plants) if args.plants else {}, **out}
    if c == "randomize":
        return "/randomize", {"config": _read(args.config) if args.config else {}, "seed": args.seed,
                              "count": args.count, **out}
    if c == "bench":
        return "/bench", {"envs": args.envs, "workers": args.workers, **out}
    raise handlers.InputError(f"unknown command {c!r}")


def _local(args) -> dict:
    c = args.command
    if c == "simulate":
        return handlers.simulate(args.scene, args.out)
    if c == "indent":
        return handlers.indent(args.shape, args.mode, args.model, args.out, args.resolution, args.retract)
    if c == "batch":
        return handlers.batch(args.spec, args.workers, args.out)
    if c == "compare":
        return handlers.compare(args.scene, args.models, args.out)
    if c == "calibrate":
        return handlers.calibrate(args.problem, args.out)
    if c == "align-control":
        return handlers.align_control(args.plants or {}, args.out)
    if c == "randomize":
        return handlers.randomize(args.config or {}, args.seed, args.count, args.out)
    if c == "bench":
        return handlers.run_bench(args.envs, args.workers, args.out)
    raise handlers.InputError(f"unknown command {c!r}")


def _remote(args) -> tuple[int, dict]:
    import httpx

    path, body = _request(args)
    try:
        r = httpx.post(args.server.rstrip("/") + path, json=body, timeout=None)
    except httpx.HTTPError as exc:
        return EXIT_INPUT, {"ok": False, "kind": "invalid_input", "error": f"server unreachable: {exc}"}
    data = r.json()
    if r.status_code == 200:
        return EXIT_OK, data["result"]
    kind = data.get("kind") if isinstance(data, dict) else None
    return (EXIT_SOLVER if kind == "solver_failure" else EXIT_INPUT), data


def _summary(result: dict) -> dict:
    # randomize can return thousands of records; the file has them all
    return {k: v for k, v in result.items() if k != "records"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "serve":
        import uvicorn

        uvicorn.run("tacsim.service:app", host=args.host, port=args.port)
        return EXIT_OK
    try:
        if args.server:
            code, result = _remote(args)
        else:
            code, result = EXIT_OK, _local(args)
    except handlers.InputError as exc:
        print(f"tacsim: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverFailure as exc:
        print(f"tacsim: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if code != EXIT_OK:
        print(f"tacsim: {result.get('kind', 'error')}: {result.get('error', result)}", file=sys.stderr)
        return code
    print(json.dumps(_summary(result), indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
