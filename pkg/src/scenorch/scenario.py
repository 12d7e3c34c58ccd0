"""Scenario documents: YAML wrapper around the pseudocode program.

A scenario file carries a free-text description (ignored by the engine),
the actor/constraint pseudocode verbatim, parameter bindings, the map
(builder config or a map-file path), run defaults, the scripted ego
configuration, and an `expect` section with success criteria.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from .constraint_dsl import BoilerplateConfig, ScenarioProgram, parse_scenario
from .errors import NoConflictError, ScenorchError
from .lane_map import (
    ConflictPoint,
    LaneGraph,
    RoutePath,
    build_t_intersection,
    conflict_point,
    load_lane_graph,
    resolve_route,
)
from .scenario_eval import SuccessCriteria, criteria_from_dict


@dataclass(frozen=True)
class EgoConfig:
    """Scripted longitudinal car-following policy parameters (IDM-style)."""

    desired_speed: float = 10.0
    headway: float = 1.5
    accel_max: float = 1.5
    comfort_decel: float = 2.0
    jam_distance: float = 2.0
    vehicle_length: float = 4.5
    delta: float = 4.0
    yield_at_stop_line: bool = False
    yield_radius: float = 25.0
    yield_clear_speed: float = 0.5
    lateral_affinity: float = 2.0


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    program_text: str
    program: ScenarioProgram
    parameters: dict[str, float]
    map_spec: dict
    horizon: float = 30.0
    dt: float = 0.1
    replan_hz: float = 1.0
    ego: EgoConfig = EgoConfig()
    expect: dict | None = None
    boilerplate: BoilerplateConfig = BoilerplateConfig()
    base_dir: Path = Path(".")


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ScenorchError(f"cannot read scenario {path}: {e}") from None
    except yaml.YAMLError as e:
        raise ScenorchError(f"scenario {path} is not valid YAML: {e}") from None
    if not isinstance(doc, dict):
        raise ScenorchError(f"scenario {path} must be a mapping")
    return scenario_from_dict(doc, name=doc.get("name", path.stem), base_dir=path.parent)


def scenario_from_dict(doc: dict, name: str, base_dir: Path = Path(".")) -> Scenario:
    for key in ("program", "map"):
        if key not in doc:
            raise ScenorchError(f"scenario {name} is missing the {key!r} section")
    program_text = doc["program"]
    program = parse_scenario(program_text)
    parameters = {str(k): float(v) for k, v in (doc.get("parameters") or {}).items()}
    run = doc.get("run") or {}
    ego_raw = doc.get("ego") or {}
    bp_raw = doc.get("bounds") or {}
    return Scenario(
        name=name,
        description=str(doc.get("description", "")),
        program_text=program_text,
        program=program,
        parameters=parameters,
        map_spec=doc["map"],
        horizon=float(run.get("horizon", 30.0)),
        dt=float(run.get("dt", 0.1)),
        replan_hz=float(run.get("replan_hz", 1.0)),
        ego=EgoConfig(**ego_raw),
        expect=doc.get("expect"),
        boilerplate=BoilerplateConfig(
            v_max=float(bp_raw.get("v_max", 20.0)),
            a_min=float(bp_raw.get("a_min", -6.0)),
            a_max=float(bp_raw.get("a_max", 4.0)),
            horizon=float(run.get("horizon", 30.0)),
        ),
        base_dir=base_dir,
    )


def build_graph(scenario: Scenario) -> LaneGraph:
    spec = scenario.map_spec
    if "t_intersection" in spec:
        cfg = spec["t_intersection"] or {}
        return build_t_intersection(
            lane_width=float(cfg.get("lane_width", 3.5)),
            road_length=float(cfg.get("road_length", 400.0)),
            driveway_length=float(cfg.get("driveway_length", 60.0)),
        )
    if "file" in spec:
        map_path = scenario.base_dir / spec["file"]
        return load_lane_graph(map_path.read_text())
    raise ScenorchError(f"map section needs 't_intersection' or 'file': {spec}")


@dataclass
class ScenarioRuntime:
    """A scenario bound to a map: routes resolved, conflict registered."""

    scenario: Scenario
    graph: LaneGraph
    paths: dict[int, RoutePath]
    conflict: ConflictPoint | None
    bindings: dict[str, float]
    criteria: SuccessCriteria | None

    @property
    def ego_id(self) -> int:
        return min(self.paths)


def assemble_runtime(
    scenario: Scenario, overrides: Mapping[str, float] | None = None
) -> ScenarioRuntime:
    graph = build_graph(scenario)
    bindings = dict(scenario.parameters)
    if overrides:
        bindings.update({k: float(v) for k, v in overrides.items()})
    paths: dict[int, RoutePath] = {}
    for actor in scenario.program.actors:
        paths[actor.actor_id] = resolve_route(graph, list(actor.route))
    conflict = None
    ids = sorted(paths)
    if len(ids) >= 2:
        try:
            conflict = conflict_point(paths[ids[0]], paths[ids[1]])
        except NoConflictError:
            conflict = None
    criteria = None
    if scenario.expect:
        criteria = criteria_from_dict(scenario.expect, bindings)
    return ScenarioRuntime(scenario, graph, paths, conflict, bindings, criteria)
