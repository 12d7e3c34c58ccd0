"""Command-line harness: run, grid, compare-modes, validate.

Exit codes: 0 success, 2 parse error, 3 lowering error, 4 solve failure,
5 evaluation failure, 6 I/O error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .errors import (
    DslParseError,
    EvaluationError,
    LadderExhaustedError,
    LoweringError,
    MapError,
    OrchestrationError,
    ScenorchError,
    SolverTransportError,
    TraceIOError,
)
from .orchestrator import run_closed_loop, run_open_loop, scripted_ego
from .plotting import render_trace_svg
from .scenario import Scenario, assemble_runtime, load_scenario
from .scenario_eval import evaluate
from .solver_bridge import DEFAULT_LADDER, DEFAULT_TIMEOUT, resolve_backend
from .trace import Trace, write_trace

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_LOWERING = 3
EXIT_SOLVE = 4
EXIT_EVAL = 5
EXIT_IO = 6


@dataclass(frozen=True)
class RunConfig:
    scenario_path: Path
    mode: str = "open"  # open | closed
    replan_hz: float | None = None
    horizon: float | None = None
    dt: float | None = None
    ladder: tuple[float, ...] = DEFAULT_LADDER
    per_step_timeout: float = DEFAULT_TIMEOUT
    solver: str | None = None
    out_dir: Path = Path("out")
    seed: int = 0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon is not None and self.horizon < 0:
            raise ScenorchError(f"horizon must be >= 0, got {self.horizon}")
        if self.dt is not None and self.dt <= 0:
            raise ScenorchError(f"dt must be > 0, got {self.dt}")
        if list(self.ladder) != sorted(self.ladder) or not self.ladder:
            raise ScenorchError(f"ladder must be non-empty ascending: {self.ladder}")

    def hash(self, scenario: Scenario) -> str:
        payload = json.dumps(
            {
                "engine": __version__,
                "scenario": scenario.program_text,
                "parameters": scenario.parameters,
                "overrides": self.overrides,
                "mode": self.mode,
                "replan_hz": self.replan_hz,
                "horizon": self.horizon,
                "dt": self.dt,
                "ladder": list(self.ladder),
                "seed": self.seed,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _run_once(config: RunConfig, scenario: Scenario, backend):
    runtime = assemble_runtime(scenario, config.overrides)
    policy = scripted_ego(scenario.ego, runtime.ego_id)
    if config.mode == "closed":
        trace = run_closed_loop(
            runtime, policy, backend,
            replan_hz=config.replan_hz, horizon=config.horizon, dt=config.dt,
            ladder=config.ladder, per_step_timeout=config.per_step_timeout,
        )
    else:
        # plain "open" plays the solved profiles for every actor;
        # "open-policy" keeps the ego on the policy with replanning disabled
        trace = run_open_loop(
            runtime, backend,
            horizon=config.horizon, dt=config.dt,
            ladder=config.ladder, per_step_timeout=config.per_step_timeout,
            ego_policy=policy if config.mode == "open-policy" else None,
        )
    trace.metadata["config_hash"] = config.hash(scenario)
    report = None
    if runtime.criteria is not None:
        report = evaluate(trace, runtime.criteria, runtime.paths)
    return runtime, trace, report


def _report_dict(report) -> dict | None:
    if report is None:
        return None
    return {
        "route_ok": {str(k): v for k, v in report.route_ok.items()},
        "interaction_ok": report.interaction_ok,
        "trigger_ok": list(report.trigger_ok),
        "residuals": dict(report.residuals),
        "onset_frame": report.onset_frame,
        "overall": [report.overall(0), report.overall(1)],
        "template_version": report.template_version,
    }


def _write_artifacts(out_dir: Path, runtime, trace: Trace, report) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trace(trace, out_dir / "trace.jsonl")
    (out_dir / "plot.svg").write_text(render_trace_svg(trace, runtime.graph))
    (out_dir / "report.json").write_text(
        json.dumps(_report_dict(report), indent=1, sort_keys=True)
    )
    (out_dir / "run_stats.json").write_text(
        json.dumps({"solves": trace.timings}, indent=1, sort_keys=True)
    )


def cmd_run(config: RunConfig) -> int:
    scenario = load_scenario(config.scenario_path)
    backend = resolve_backend(config.solver)
    runtime, trace, report = _run_once(config, scenario, backend)
    _write_artifacts(config.out_dir, runtime, trace, report)
    if report is not None and not report.overall(1):
        print(f"evaluation failed at the loose tolerance: {_report_dict(report)}")
        return EXIT_EVAL
    print(f"ok: {len(trace.frames)} frames -> {config.out_dir}")
    return EXIT_OK


def cmd_validate(config: RunConfig) -> int:
    """Parse and lower only; no solving."""
    from .orchestrator import OrchestrationMode, build_problem

    scenario = load_scenario(config.scenario_path)
    runtime = assemble_runtime(scenario, config.overrides)
    profiles, constraints = build_problem(
        runtime, OrchestrationMode.OPEN_LOOP, scenario.horizon
    )
    n_atoms = sum(len(c.atoms) for c in constraints)
    print(
        f"{scenario.name}: {len(scenario.program.actors)} actors, "
        f"{len(constraints)} constraints ({n_atoms} atoms), "
        f"{sum(len(p.variables()) for p in profiles.values())} variables"
    )
    return EXIT_OK


def cmd_grid(config: RunConfig, grid: dict[str, list[float]]) -> int:
    scenario = load_scenario(config.scenario_path)
    names = sorted(grid)
    if not names:
        runtime, trace, report = _run_once(config, scenario, resolve_backend(config.solver))
        _write_artifacts(config.out_dir, runtime, trace, report)
        return EXIT_OK
    for name in names:
        if all(p.name != name for p in scenario.program.parameters):
            raise LoweringError(f"grid parameter {name!r} is not a scenario parameter")

    def cells(idx: int, prefix: dict):
        if idx == len(names):
            yield dict(prefix)
            return
        for v in grid[names[idx]]:
            prefix[names[idx]] = v
            yield from cells(idx + 1, prefix)
        prefix.pop(names[idx], None)

    all_cells = list(cells(0, {}))

    def run_cell(cell: dict) -> dict:
        backend = resolve_backend(config.solver)  # each cell owns a session
        overrides = {**config.overrides, **cell}
        cell_cfg = RunConfig(
            scenario_path=config.scenario_path, mode=config.mode,
            replan_hz=config.replan_hz, horizon=config.horizon, dt=config.dt,
            ladder=config.ladder, per_step_timeout=config.per_step_timeout,
            solver=config.solver, out_dir=config.out_dir, seed=config.seed,
            overrides=overrides,
        )
        entry = {"cell": cell}
        try:
            runtime, trace, report = _run_once(cell_cfg, scenario, backend)
        except LadderExhaustedError as e:
            entry["status"] = "infeasible"
            entry["max_tolerance"] = e.max_tolerance
            return entry
        finally:
            if hasattr(backend, "close"):
                backend.close()
        if report is None:
            entry["status"] = "ran"
            return entry
        entry["residuals"] = dict(report.residuals)
        if report.onset_frame is None or not all(
            math.isfinite(v) for v in report.residuals.values()
        ):
            entry["status"] = "not_met"  # the reactive trigger never fired
        elif report.overall(0):
            entry["status"] = "pass"
        else:
            entry["status"] = "fail"
        entry["overall"] = [report.overall(0), report.overall(1)]
        return entry

    workers = min(4, len(all_cells))
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run_cell, all_cells))

    config.out_dir.mkdir(parents=True, exist_ok=True)
    matrix = {"parameters": names, "cells": results}
    (config.out_dir / "matrix.json").write_text(json.dumps(matrix, indent=1, sort_keys=True))
    (config.out_dir / "matrix.txt").write_text(render_matrix(matrix))
    print(render_matrix(matrix))
    return EXIT_OK


_MATRIX_MARKS = {"pass": "o", "fail": "!", "not_met": "x", "infeasible": "-", "ran": "?"}


def render_matrix(matrix: dict) -> str:
    names = matrix["parameters"]
    cells = matrix["cells"]
    if len(names) == 2:
        xs = sorted({c["cell"][names[0]] for c in cells})
        ys = sorted({c["cell"][names[1]] for c in cells})
        lookup = {(c["cell"][names[0]], c["cell"][names[1]]): c["status"] for c in cells}
        lines = [f"rows: {names[1]}  cols: {names[0]}  (o pass, ! fail, x trigger-not-met, - infeasible)"]
        header = "        " + "".join(f"{x:>8g}" for x in xs)
        lines.append(header)
        for y in reversed(ys):
            row = f"{y:>8g}" + "".join(
                f"{_MATRIX_MARKS.get(lookup.get((x, y), '?'), '?'):>8}" for x in xs
            )
            lines.append(row)
        return "\n".join(lines) + "\n"
    lines = []
    for c in cells:
        lines.append(f"{c['cell']} -> {c['status']}")
    return "\n".join(lines) + "\n"


def cmd_compare_modes(config: RunConfig) -> int:
    scenario = load_scenario(config.scenario_path)
    legs = {}
    for mode in ("open-policy", "closed"):
        leg_cfg = RunConfig(
            scenario_path=config.scenario_path, mode=mode,
            replan_hz=config.replan_hz, horizon=config.horizon, dt=config.dt,
            ladder=config.ladder, per_step_timeout=config.per_step_timeout,
            solver=config.solver, out_dir=config.out_dir / mode, seed=config.seed,
            overrides=config.overrides,
        )
        backend = resolve_backend(config.solver)
        try:
            runtime, trace, report = _run_once(leg_cfg, scenario, backend)
            _write_artifacts(leg_cfg.out_dir, runtime, trace, report)
            legs[mode] = {"status": "ok", "report": _report_dict(report)}
        except LadderExhaustedError as e:
            legs[mode] = {"status": "solve-failure", "detail": str(e)}
        finally:
            if hasattr(backend, "close"):
                backend.close()
    config.out_dir.mkdir(parents=True, exist_ok=True)
    comparison = {"scenario": scenario.name, "legs": legs}
    (config.out_dir / "comparison.json").write_text(
        json.dumps(comparison, indent=1, sort_keys=True)
    )
    print(json.dumps(comparison, indent=1, sort_keys=True))
    return EXIT_OK


def _parse_ladder(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ScenorchError(f"--param needs name=value, got {pair!r}")
        name, value = pair.split("=", 1)
        out[name.strip()] = float(value)
    return out


def _parse_grid(pairs: list[str]) -> dict[str, list[float]]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ScenorchError(f"--grid needs name=v1,v2,..., got {pair!r}")
        name, values = pair.split("=", 1)
        out[name.strip()] = [float(v) for v in values.split(",") if v.strip()]
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenorch",
        description="Constraint-based traffic scenario orchestration",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", type=Path)
        p.add_argument("--mode", choices=("open", "open-policy", "closed"), default="open")
        p.add_argument("--replan-hz", type=float, default=None)
        p.add_argument("--horizon", type=float, default=None)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--ladder", type=str, default=None,
                       help="comma-separated ascending tolerances, e.g. 0,0.25,0.5")
        p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT,
                       help="per-ladder-step solve timeout in seconds")
        p.add_argument("--solver", type=str, default=None,
                       help="solver command reading SMT-LIB 2 on stdin")
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--param", action="append", default=[],
                       help="override a scenario parameter: name=value")

    p_run = sub.add_parser("run", help="run one scenario and evaluate it")
    common(p_run)
    p_grid = sub.add_parser("grid", help="run a parameter grid")
    common(p_grid)
    p_grid.add_argument("--grid", action="append", default=[],
                        help="grid axis: name=v1,v2,v3 (repeatable)")
    p_cmp = sub.add_parser("compare-modes", help="open vs closed loop, same ego")
    common(p_cmp)
    p_val = sub.add_parser("validate", help="parse and lower only")
    common(p_val)
    return parser


def _config_from_args(args) -> RunConfig:
    return RunConfig(
        scenario_path=args.scenario,
        mode=args.mode,
        replan_hz=args.replan_hz,
        horizon=args.horizon,
        dt=args.dt,
        ladder=_parse_ladder(args.ladder) if args.ladder else DEFAULT_LADDER,
        per_step_timeout=args.timeout,
        solver=args.solver,
        out_dir=args.out,
        seed=args.seed,
        overrides=_parse_overrides(args.param),
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        if args.command == "run":
            return cmd_run(config)
        if args.command == "validate":
            return cmd_validate(config)
        if args.command == "grid":
            return cmd_grid(config, _parse_grid(args.grid))
        if args.command == "compare-modes":
            return cmd_compare_modes(config)
        raise ScenorchError(f"unknown command {args.command}")
    except DslParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (LoweringError, MapError) as e:
        print(f"lowering error: {e}", file=sys.stderr)
        return EXIT_LOWERING
    except (LadderExhaustedError, SolverTransportError) as e:
        print(f"solve failure: {e}", file=sys.stderr)
        return EXIT_SOLVE
    except EvaluationError as e:
        print(f"evaluation error: {e}", file=sys.stderr)
        return EXIT_EVAL
    except (TraceIOError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except OrchestrationError as e:
        print(f"orchestration error: {e}", file=sys.stderr)
        return EXIT_SOLVE


if __name__ == "__main__":
    sys.exit(main())
