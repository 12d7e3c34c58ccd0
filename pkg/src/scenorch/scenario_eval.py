"""Programmatic success verification of scenario traces.

The indicator checks three things against a trace: the intended route
(every actor stays on its declared path and, where the interaction
implies passage, reaches its final segment), the desired interaction
(pattern templates over the hero's speed/acceleration series), and the
trigger condition (measured quantities at the interaction onset within
tolerance of their targets). Templates are approximations of hand-written
criteria and are versioned; see TEMPLATE_VERSION.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import EvaluationError, ProjectionError
from .lane_map import RoutePath
from .trace import Trace

TEMPLATE_VERSION = "v1"

INTERACTIONS = (
    "yield",
    "no_yield",
    "stop_and_go",
    "hard_brake_to_stop",
    "decelerate_to_stop_at_point",
)
# interactions whose onset is a sustained deceleration vs. acceleration
_DECEL_ONSET = ("yield", "stop_and_go", "hard_brake_to_stop", "decelerate_to_stop_at_point")
# interactions that imply the actor eventually passes its final segment
_REQUIRES_PASSAGE = ("no_yield", "stop_and_go")

ONSET_ACCEL_THRESHOLD = 0.5  # m/s^2
ONSET_SUSTAIN = 0.5  # s
STOPPED_SPEED = 0.1  # m/s
ROUTE_LATERAL_TOLERANCE = 1.0  # m
ROUTE_FRAME_FRACTION = 0.99


@dataclass(frozen=True)
class TriggerComponent:
    kind: str  # gap_to_actor | distance_to_landmark | time_to_arrival
    actor: int
    reference: str | int  # landmark name, or the other actor id for gaps
    target: float
    anchor: str = "onset"  # onset | stop
    offset: float = 0.0  # added to the landmark arclength

    def label(self) -> str:
        return f"{self.kind}[A{self.actor}->{self.reference}]"


@dataclass(frozen=True)
class SuccessCriteria:
    routes: Mapping[int, tuple[str, ...]]
    interaction: str
    trigger: tuple[TriggerComponent, ...]
    interaction_actor: int = 1
    require_completion: Mapping[int, bool] = field(default_factory=dict)
    distance_tolerances: tuple[float, float] = (2.0, 5.0)
    time_tolerances: tuple[float, float] = (0.5, 1.0)

    def __post_init__(self):
        if self.interaction not in INTERACTIONS:
            raise EvaluationError(f"unknown interaction {self.interaction!r}")

    def completion_required(self, actor_id: int) -> bool:
        if actor_id in self.require_completion:
            return self.require_completion[actor_id]
        if actor_id == self.interaction_actor:
            return self.interaction in _REQUIRES_PASSAGE
        return True


@dataclass(frozen=True)
class SuccessReport:
    route_ok: Mapping[int, bool]
    interaction_ok: bool
    trigger_ok: tuple[bool, bool]
    residuals: Mapping[str, float]
    onset_frame: int | None
    template_version: str = TEMPLATE_VERSION

    def routes_ok(self) -> bool:
        return all(self.route_ok.values())

    def overall(self, level: int) -> bool:
        return self.routes_ok() and self.interaction_ok and self.trigger_ok[level]


def interaction_onset(trace: Trace, criteria: SuccessCriteria) -> int | None:
    """First frame where the hero's interaction demonstrably begins.

    Deceleration-type interactions: acceleration <= -0.5 m/s^2 sustained
    for >= 0.5 s. Acceleration-to-pass: the mirrored condition. Returns
    None (no onset) when nothing qualifies.
    """
    if not trace.frames:
        raise EvaluationError("empty trace")
    hero = criteria.interaction_actor
    acc = trace.series(hero, "a")
    window = max(1, int(round(ONSET_SUSTAIN / trace.dt)))
    if criteria.interaction in _DECEL_ONSET:
        hit = lambda a: a <= -ONSET_ACCEL_THRESHOLD
    else:
        hit = lambda a: a >= ONSET_ACCEL_THRESHOLD
    for i in range(len(acc)):
        if i + window > len(acc):
            break
        if all(hit(a) for a in acc[i : i + window]):
            return i
    return None


def _project_series(trace: Trace, actor_id: int, path: RoutePath):
    """(arclength, lateral) per frame for an actor against a path."""
    out = []
    for f in trace.frames:
        st = f.states[actor_id]
        s, dist, _ = path.spline.project(st.x, st.y)
        out.append((s, dist))
    return out


def _route_check(trace: Trace, actor_id: int, path: RoutePath, need_completion: bool) -> bool:
    proj = _project_series(trace, actor_id, path)
    on_path = sum(1 for _, d in proj if d <= ROUTE_LATERAL_TOLERANCE)
    if on_path < ROUTE_FRAME_FRACTION * len(proj):
        return False
    if need_completion:
        last_seg = path.segment_ids[-1]
        entry, _ = path.segment_bounds[last_seg]
        if max(s for s, _ in proj) < entry + 0.1:
            return False
    return True


def _stop_frame(trace: Trace, hero: int, start: int) -> int | None:
    v = trace.series(hero, "v")
    for i in range(start, len(v)):
        if v[i] <= STOPPED_SPEED:
            return i
    return None


def _crossing_frame(proj: Sequence[tuple[float, float]], arclength: float) -> int | None:
    for i, (s, _) in enumerate(proj):
        if s >= arclength:
            return i
    return None


def _interaction_check(
    trace: Trace,
    criteria: SuccessCriteria,
    paths: Mapping[int, RoutePath],
    onset: int | None,
) -> bool:
    hero = criteria.interaction_actor
    v = trace.series(hero, "v")
    a = trace.series(hero, "a")
    start = onset if onset is not None else 0
    kind = criteria.interaction
    if kind == "decelerate_to_stop_at_point":
        return _stop_frame(trace, hero, start) is not None
    if kind == "hard_brake_to_stop":
        stop = _stop_frame(trace, hero, start)
        return stop is not None and min(a[start : stop + 1], default=0.0) <= -4.0
    if kind == "stop_and_go":
        stop = _stop_frame(trace, hero, start)
        if stop is None:
            return False
        go = next((i for i in range(stop, len(v)) if v[i] >= 1.0), None)
        if go is None:
            return False
        cp = _conflict_arclength(paths, hero)
        proj = _project_series(trace, hero, paths[hero])
        return _crossing_frame(proj, cp) is not None
    if kind in ("yield", "no_yield"):
        other = next(i for i in paths if i != hero)
        cp_h = _conflict_arclength(paths, hero)
        cp_o = _conflict_arclength(paths, other)
        hero_cross = _crossing_frame(_project_series(trace, hero, paths[hero]), cp_h)
        other_cross = _crossing_frame(_project_series(trace, other, paths[other]), cp_o)
        if kind == "no_yield":
            if hero_cross is None:
                return False
            return other_cross is None or hero_cross <= other_cross
        # yield: hero slows and crosses only after the other actor
        if other_cross is None:
            return False
        slowed = min(v[start : other_cross + 1], default=v[0]) <= 1.0
        return slowed and (hero_cross is None or hero_cross > other_cross)
    raise EvaluationError(f"unknown interaction {kind!r}")


def _conflict_arclength(paths: Mapping[int, RoutePath], actor: int) -> float:
    path = paths[actor]
    if "lane_turn" not in path.landmarks:
        raise EvaluationError(
            f"criteria need a conflict point but actor {actor}'s path has none registered"
        )
    return path.landmarks["lane_turn"]


def _measure(
    comp: TriggerComponent,
    trace: Trace,
    paths: Mapping[int, RoutePath],
    frame: int,
) -> float:
    st = trace.frames[frame].states[comp.actor]
    path = paths[comp.actor]
    if comp.kind == "gap_to_actor":
        ref_path = paths[int(comp.reference)]
        ref_state = trace.frames[frame].states[int(comp.reference)]
        try:
            s_self, _, _ = ref_path.spline.project(st.x, st.y)
            s_ref, _, _ = ref_path.spline.project(ref_state.x, ref_state.y)
        except ProjectionError:
            return math.inf
        return s_self - s_ref
    if comp.kind in ("distance_to_landmark", "time_to_arrival"):
        if comp.reference == "lane_turn":
            target_s = _conflict_arclength(paths, comp.actor) + comp.offset
        else:
            target_s = path.landmark(str(comp.reference)) + comp.offset
        s, _, _ = path.spline.project(st.x, st.y)
        dist = target_s - s
        if comp.kind == "distance_to_landmark":
            return dist
        return dist / max(st.v, 1e-6)
    raise EvaluationError(f"unknown trigger kind {comp.kind!r}")


def evaluate(
    trace: Trace,
    criteria: SuccessCriteria,
    paths: Mapping[int, RoutePath],
) -> SuccessReport:
    """Run the success indicator at both tolerance levels."""
    if not trace.frames:
        raise EvaluationError("empty trace")
    route_ok = {
        actor: _route_check(trace, actor, paths[actor], criteria.completion_required(actor))
        for actor in criteria.routes
    }
    onset = interaction_onset(trace, criteria)
    interaction_ok = _interaction_check(trace, criteria, paths, onset)
    residuals: dict[str, float] = {}
    ok_levels = [True, True]
    for comp in criteria.trigger:
        if comp.anchor == "stop":
            frame = _stop_frame(trace, criteria.interaction_actor, onset or 0)
        else:
            frame = onset
        if frame is None:
            residuals[comp.label()] = math.inf
            ok_levels = [False, False]
            continue
        measured = _measure(comp, trace, paths, frame)
        residual = measured - comp.target
        residuals[comp.label()] = residual
        tols = (
            criteria.time_tolerances
            if comp.kind == "time_to_arrival"
            else criteria.distance_tolerances
        )
        for level in (0, 1):
            if abs(residual) > tols[level]:
                ok_levels[level] = False
    return SuccessReport(
        route_ok=route_ok,
        interaction_ok=interaction_ok,
        trigger_ok=(ok_levels[0], ok_levels[1]),
        residuals=residuals,
        onset_frame=onset,
    )


def criteria_from_dict(spec: dict, bindings: Mapping[str, float]) -> SuccessCriteria:
    """Build criteria from a scenario file's `expect` section.

    Numeric fields may name scenario parameters; they resolve through the
    current bindings.
    """

    def resolve(v):
        if isinstance(v, str):
            if v not in bindings:
                raise EvaluationError(f"expect section references unknown parameter {v!r}")
            return float(bindings[v])
        return float(v)

    routes = {int(k): tuple(v) for k, v in spec.get("routes", {}).items()}
    trigger = tuple(
        TriggerComponent(
            kind=t["kind"],
            actor=int(t["actor"]),
            reference=t["reference"] if isinstance(t["reference"], str) else int(t["reference"]),
            target=resolve(t["target"]),
            anchor=t.get("anchor", "onset"),
            offset=resolve(t.get("offset", 0.0)),
        )
        for t in spec.get("trigger", [])
    )
    return SuccessCriteria(
        routes=routes,
        interaction=spec["interaction"],
        trigger=trigger,
        interaction_actor=int(spec.get("interaction_actor", 1)),
        require_completion={int(k): bool(v) for k, v in spec.get("require_completion", {}).items()},
        distance_tolerances=tuple(spec.get("distance_tolerances", (2.0, 5.0))),
        time_tolerances=tuple(spec.get("time_tolerances", (0.5, 1.0))),
    )


def batch_report(
    results: Sequence[tuple[str, SuccessReport]],
) -> dict:
    """Success rates per scenario family per tolerance level."""
    table: dict[str, dict] = {}
    for family, report in results:
        row = table.setdefault(family, {"n": 0, "pass": [0, 0]})
        row["n"] += 1
        for level in (0, 1):
            if report.overall(level):
                row["pass"][level] += 1
    out = {
        family: {
            "n": row["n"],
            "rate_level0": row["pass"][0] / row["n"] if row["n"] else None,
            "rate_level1": row["pass"][1] / row["n"] if row["n"] else None,
        }
        for family, row in sorted(table.items())
    }
    return out


def render_batch_report(report: dict) -> str:
    lines = [f"{'family':<40} {'n':>4} {'tight':>7} {'loose':>7}"]
    for family, row in report.items():
        tight = "—" if row["rate_level0"] is None else f"{row['rate_level0']:.2f}"
        loose = "—" if row["rate_level1"] is None else f"{row['rate_level1']:.2f}"
        lines.append(f"{family:<40} {row['n']:>4} {tight:>7} {loose:>7}")
    return "\n".join(lines)
