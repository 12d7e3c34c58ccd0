"""Scenario execution: open-loop and closed-loop against an ego policy.

Open loop solves the constraint problem once and plays every actor's
solved profile. Closed loop hands the ego to an external policy,
re-assembles the problem at the replan frequency with the observed world
pinned in, and swaps the non-ego actors onto each new solution; failed
replans are recorded and the previous profiles continue.

Rollout assembly follows the closed-loop lowering rules: initial-state
constraints are replaced by pins (position for every actor, velocity for
the ego), ego pieces are lifted one order toward ACCELERATION under fresh
names, a no-reverse bound is added on the ego's knot velocities, and each
reactive constraint is weakened by the world's buffer value on both
sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Protocol

from .constraint_dsl import Atom, ConstraintSet, LoweredConstraint, boilerplate, lower
from .errors import LadderExhaustedError, OrchestrationError, ProjectionError
from .lane_map import RoutePath, from_frenet, to_frenet
from .motion_profile import (
    ConcreteProfile,
    MotionProfile,
    Order,
    PieceNamer,
    instantiate,
    profile_from_skeleton,
    state_at_knot,
)
from .scenario import EgoConfig, ScenarioRuntime
from .solver_bridge import (
    DEFAULT_LADDER,
    DEFAULT_TIMEOUT,
    SolverBackend,
    solve_with_ladder,
)
from .symbolic import const
from .trace import ActorState, Trace, WorldState

ACCEL_LIMITS = (-6.0, 4.0)
MIN_BUFFER = 0.5


class OrchestrationMode(Enum):
    OPEN_LOOP = "open_loop"
    CLOSED_LOOP_INITIALIZATION = "closed_loop_initialization"
    CLOSED_LOOP_ROLLOUT = "closed_loop_rollout"


class EgoPolicy(Protocol):
    def step(self, world: WorldState, path: RoutePath) -> float: ...


# ---------------------------------------------------------------------------
# Problem assembly


def build_profiles(
    runtime: ScenarioRuntime, mode: OrchestrationMode
) -> dict[int, MotionProfile]:
    namer = PieceNamer()
    lift_ego = mode is OrchestrationMode.CLOSED_LOOP_ROLLOUT
    profiles: dict[int, MotionProfile] = {}
    for actor in runtime.scenario.program.actors:
        profiles[actor.actor_id] = profile_from_skeleton(
            actor.actor_id,
            list(actor.skeleton),
            namer,
            lift_orders=lift_ego and actor.actor_id == runtime.ego_id,
        )
    return profiles


def _weaken(c: LoweredConstraint, buffer: float) -> LoweredConstraint:
    """Widen a reactive constraint's (in)equality by the buffer on either side."""
    atoms: list[Atom] = []
    buf = const(buffer)
    for atom in c.atoms:
        if atom.op == "==":
            atoms.append(Atom(atom.lhs, "<=", atom.rhs + buf))
            atoms.append(Atom(atom.lhs, ">=", atom.rhs - buf))
        elif atom.op in ("<=", "<"):
            atoms.append(Atom(atom.lhs, atom.op, atom.rhs + buf))
        else:
            atoms.append(Atom(atom.lhs, atom.op, atom.rhs - buf))
    return LoweredConstraint(
        tuple(atoms), f"{c.label} (buffered {buffer:g})", c.line,
        reactive=True, initial=False, positional=c.positional,
    )


def build_problem(
    runtime: ScenarioRuntime,
    mode: OrchestrationMode,
    horizon_budget: float,
    world: WorldState | None = None,
    pin_velocity: frozenset[int] = frozenset(),
) -> tuple[dict[int, MotionProfile], ConstraintSet]:
    """Profiles plus the mode's full constraint set."""
    profiles = build_profiles(runtime, mode)
    scenario = runtime.scenario
    lowered = lower(scenario.program, profiles, runtime.paths, runtime.bindings)
    constraints: ConstraintSet = []
    if mode is OrchestrationMode.CLOSED_LOOP_ROLLOUT:
        if world is None:
            raise OrchestrationError("rollout assembly needs the observed world state")
        buffer = max(world.value, MIN_BUFFER)
        for c in lowered:
            if c.initial:
                continue
            constraints.append(_weaken(c, buffer) if c.reactive else c)
        constraints.extend(_pin_constraints(runtime, profiles, world, pin_velocity))
        constraints.append(_no_reverse(profiles[runtime.ego_id]))
    else:
        constraints.extend(lowered)
    bp_cfg = scenario.boilerplate
    bp_cfg = type(bp_cfg)(
        v_max=bp_cfg.v_max, a_min=bp_cfg.a_min, a_max=bp_cfg.a_max,
        horizon=max(horizon_budget, 0.0),
    )
    constraints.extend(boilerplate(profiles, runtime.paths, bp_cfg))
    return profiles, constraints


def assemble_rollout(
    runtime: ScenarioRuntime,
    world: WorldState,
    horizon_budget: float,
    pin_velocity: frozenset[int] = frozenset(),
) -> tuple[dict[int, MotionProfile], ConstraintSet]:
    """The CLOSED_LOOP_ROLLOUT problem for the observed world state.

    pin_velocity names non-ego actors whose scripted tail (any piece past
    the first) has begun executing; their speed is pinned for continuity.
    The ego's velocity is always pinned.
    """
    return build_problem(
        runtime, OrchestrationMode.CLOSED_LOOP_ROLLOUT, horizon_budget, world,
        pin_velocity,
    )


def _pin_constraints(
    runtime: ScenarioRuntime,
    profiles: Mapping[int, MotionProfile],
    world: WorldState,
    pin_velocity: frozenset[int],
) -> ConstraintSet:
    out: ConstraintSet = []
    for actor_id in sorted(profiles):
        st = world.states[actor_id]
        path = runtime.paths[actor_id]
        try:
            fs = to_frenet(path, st.x, st.y, st.theta, st.v, st.a)
        except ProjectionError as e:
            raise OrchestrationError(f"actor {actor_id} is off-path at replan: {e}") from None
        profile = profiles[actor_id]
        t0 = profile.knots[0]
        out.append(
            LoweredConstraint(
                (Atom(state_at_knot(profile, t0, Order.POSITION), "==", const(fs.l)),),
                f"pin A{actor_id} position", positional=True,
            )
        )
        if actor_id == runtime.ego_id or actor_id in pin_velocity:
            out.append(
                LoweredConstraint(
                    (
                        Atom(
                            state_at_knot(profile, t0, Order.VELOCITY),
                            "==",
                            const(max(fs.l_dot, 0.0)),
                        ),
                    ),
                    f"pin A{actor_id} velocity", positional=False,
                )
            )
    return out


def _no_reverse(profile: MotionProfile) -> LoweredConstraint:
    atoms = tuple(
        Atom(state_at_knot(profile, knot, Order.VELOCITY), ">=", const(0))
        for knot in profile.knots
    )
    return LoweredConstraint(atoms, f"A{profile.actor_id} no-reverse", positional=False)


# ---------------------------------------------------------------------------
# Scripted ego policy


class ScriptedEgo:
    """Deterministic IDM-style longitudinal controller.

    Free-road acceleration toward the desired speed, headway-proportional
    braking behind a projected leader, and optional yielding at the
    stop_line landmark: the stop line acts as a standing obstacle until
    every other actor near it is slow or gone.
    """

    def __init__(self, config: EgoConfig, ego_id: int = 0):
        self.config = config
        self.ego_id = ego_id

    def step(self, world: WorldState, path: RoutePath) -> float:
        cfg = self.config
        me = world.states[self.ego_id]
        fs = to_frenet(path, me.x, me.y, me.theta, me.v, me.a)
        v = max(fs.l_dot, 0.0)
        accel = self._idm(v, None, 0.0)
        leader = self._leader(world, path, fs.l)
        if leader is not None:
            gap, leader_speed = leader
            accel = min(accel, self._idm(v, gap, v - leader_speed))
        if cfg.yield_at_stop_line and "stop_line" in path.landmarks:
            stop_l = path.landmarks["stop_line"]
            if fs.l < stop_l and self._blocked(world, path, stop_l):
                accel = min(accel, self._idm(v, stop_l - fs.l, v))
        return max(ACCEL_LIMITS[0], min(accel, cfg.accel_max))

    def _idm(self, v: float, gap: float | None, closing: float) -> float:
        cfg = self.config
        free = 1.0 - (v / max(cfg.desired_speed, 0.1)) ** cfg.delta
        if gap is None:
            return cfg.accel_max * free
        s_star = cfg.jam_distance + max(
            0.0,
            v * cfg.headway
            + v * closing / (2.0 * math.sqrt(cfg.accel_max * cfg.comfort_decel)),
        )
        return cfg.accel_max * (free - (s_star / max(gap, 0.1)) ** 2)

    def _leader(self, world: WorldState, path: RoutePath, my_l: float):
        cfg = self.config
        best = None
        for actor_id, st in world.states.items():
            if actor_id == self.ego_id:
                continue
            try:
                fo = to_frenet(path, st.x, st.y, st.theta, st.v, st.a)
            except ProjectionError:
                continue
            if fo.lateral > cfg.lateral_affinity or fo.l <= my_l + 0.1:
                continue
            gap = fo.l - my_l - cfg.vehicle_length
            if best is None or gap < best[0]:
                best = (gap, fo.l_dot)
        return best

    def _blocked(self, world: WorldState, path: RoutePath, stop_l: float) -> bool:
        cfg = self.config
        px, py = path.spline.point(stop_l)
        for actor_id, st in world.states.items():
            if actor_id == self.ego_id:
                continue
            if math.hypot(st.x - px, st.y - py) <= cfg.yield_radius and st.v > cfg.yield_clear_speed:
                return True
        return False


def scripted_ego(config: EgoConfig, ego_id: int = 0) -> ScriptedEgo:
    return ScriptedEgo(config, ego_id)


# ---------------------------------------------------------------------------
# Run loops


def _frame_count(horizon: float, dt: float) -> int:
    n = round(horizon / dt)
    if abs(n * dt - horizon) > 1e-6:
        raise OrchestrationError(f"horizon {horizon} is not a multiple of dt {dt}")
    return n


def _actor_state(path: RoutePath, concrete: ConcreteProfile, local_t: float) -> ActorState:
    l, ld, ldd = concrete.state_held(local_t)
    cs = from_frenet(path, l, ld, ldd)
    return ActorState(cs.x, cs.y, cs.theta, cs.v, cs.a)


def run_open_loop(
    runtime: ScenarioRuntime,
    backend: SolverBackend,
    horizon: float | None = None,
    dt: float | None = None,
    ladder=DEFAULT_LADDER,
    per_step_timeout: float = DEFAULT_TIMEOUT,
    ego_policy: EgoPolicy | None = None,
) -> Trace:
    """Solve once and play the solution with replanning disabled.

    Without an ego policy every actor (ego included) follows its solved
    profile. With one, the ego runs closed-loop under the policy while the
    orchestrated actors stay on their t = 0 plans (the mode-comparison
    setting where only replanning is switched off).
    """
    return _run(
        runtime, backend, OrchestrationMode.OPEN_LOOP, ego_policy, None,
        horizon, dt, ladder, per_step_timeout,
    )


def run_closed_loop(
    runtime: ScenarioRuntime,
    ego_policy: EgoPolicy,
    backend: SolverBackend,
    replan_hz: float | None = None,
    horizon: float | None = None,
    dt: float | None = None,
    ladder=DEFAULT_LADDER,
    per_step_timeout: float = DEFAULT_TIMEOUT,
) -> Trace:
    """Ego under the policy, the rest replanned at replan_hz."""
    replan_hz = runtime.scenario.replan_hz if replan_hz is None else replan_hz
    return _run(
        runtime, backend, OrchestrationMode.CLOSED_LOOP_INITIALIZATION, ego_policy,
        replan_hz, horizon, dt, ladder, per_step_timeout,
    )


def _run(
    runtime: ScenarioRuntime,
    backend: SolverBackend,
    init_mode: OrchestrationMode,
    ego_policy: EgoPolicy | None,
    replan_hz: float | None,
    horizon: float | None,
    dt: float | None,
    ladder,
    per_step_timeout: float,
) -> Trace:
    scenario = runtime.scenario
    horizon = scenario.horizon if horizon is None else horizon
    dt = scenario.dt if dt is None else dt
    n = _frame_count(horizon, dt)
    frames_per_replan = 0
    if replan_hz:
        frames_per_replan = round(1.0 / (replan_hz * dt))
        if frames_per_replan < 1 or abs(frames_per_replan * replan_hz * dt - 1.0) > 1e-6:
            raise OrchestrationError(
                f"replan period 1/{replan_hz} Hz must be a multiple of dt {dt}"
            )
    ego_id = runtime.ego_id
    ego_path = runtime.paths[ego_id]

    # the plan horizon (scenario-length bound) is the scenario's own,
    # stretched when the run simulates a longer window; a shorter trace
    # only cuts sampling and replan scheduling
    plan_horizon = max(scenario.boilerplate.horizon, horizon)
    profiles, constraints = build_problem(runtime, init_mode, plan_horizon)
    outcome = solve_with_ladder(constraints, profiles, backend, ladder, per_step_timeout)
    concretes = {i: instantiate(profiles[i], outcome.model) for i in profiles}
    epoch = 0.0
    buffer = max(outcome.tolerance, MIN_BUFFER)
    replans = [
        {"t": 0.0, "status": "sat", "tolerance": outcome.tolerance,
         "n_assertions": outcome.stats.get("n_assertions", 0)}
    ]
    timings = [
        {"t": 0.0, "wall_time": outcome.wall_time,
         "n_assertions": outcome.stats.get("n_assertions", 0), "status": "sat"}
    ]
    solutions = {0.0: concretes}
    # actors whose scripted tail has begun executing keep their speed pinned
    tail_started: set[int] = set()

    ego_l, ego_v, ego_a = concretes[ego_id].state(0.0)
    ego_v = max(ego_v, 0.0)
    frames: list[WorldState] = []
    for k in range(n + 1):
        t = k * dt
        states = {}
        for i in sorted(concretes):
            if i == ego_id and ego_policy is not None:
                cs = from_frenet(ego_path, ego_l, ego_v, ego_a)
                states[i] = ActorState(cs.x, cs.y, cs.theta, cs.v, cs.a)
            else:
                states[i] = _actor_state(runtime.paths[i], concretes[i], t - epoch)
        world = WorldState(time=t, states=states, value=buffer)
        frames.append(world)
        if frames_per_replan and k > 0 and k % frames_per_replan == 0:
            for i in concretes:
                if i != ego_id and concretes[i].piece_index_at(t - epoch) >= 1:
                    tail_started.add(i)
            try:
                r_profiles, r_constraints = assemble_rollout(
                    runtime, world, plan_horizon - t, frozenset(tail_started)
                )
                r_outcome = solve_with_ladder(
                    r_constraints, r_profiles, backend, ladder, per_step_timeout
                )
                concretes = {
                    i: instantiate(r_profiles[i], r_outcome.model) for i in r_profiles
                }
                epoch = t
                buffer = max(r_outcome.tolerance, MIN_BUFFER)
                solutions[t] = concretes
                replans.append(
                    {"t": t, "status": "sat", "tolerance": r_outcome.tolerance,
                     "n_assertions": r_outcome.stats.get("n_assertions", 0)}
                )
                timings.append(
                    {"t": t, "wall_time": r_outcome.wall_time,
                     "n_assertions": r_outcome.stats.get("n_assertions", 0),
                     "status": "sat"}
                )
            except LadderExhaustedError as e:
                n_assert = e.outcomes[-1].stats.get("n_assertions", 0) if e.outcomes else 0
                replans.append(
                    {"t": t, "status": "failed", "tolerance": e.max_tolerance,
                     "n_assertions": n_assert}
                )
                timings.append(
                    {"t": t, "wall_time": sum(o.wall_time for o in e.outcomes),
                     "n_assertions": n_assert, "status": "failed"}
                )
        if ego_policy is not None and k < n:
            a_cmd = ego_policy.step(world, ego_path)
            a_cmd = max(ACCEL_LIMITS[0], min(a_cmd, ACCEL_LIMITS[1]))
            ego_l, ego_v = _advance(ego_l, ego_v, a_cmd, dt, ego_path.total_length)
            ego_a = a_cmd

    mode_label = "closed_loop" if frames_per_replan else OrchestrationMode.OPEN_LOOP.value
    metadata = {
        "scenario": scenario.name,
        "mode": mode_label,
        "horizon": horizon,
        "replans": replans,
    }
    if frames_per_replan:
        metadata["replan_hz"] = replan_hz
    if ego_policy is not None:
        metadata["ego"] = "policy"
    trace = Trace(dt=dt, frames=frames, metadata=metadata)
    trace.timings = timings
    trace.solutions = solutions
    return trace


def _advance(l: float, v: float, a: float, dt: float, max_l: float) -> tuple[float, float]:
    """Forward-only kinematic step; braking stops exactly at v = 0."""
    if a < 0 and v + a * dt < 0:
        t_stop = v / -a
        l = l + v * t_stop + 0.5 * a * t_stop * t_stop
        v = 0.0
    else:
        l = l + v * dt + 0.5 * a * dt * dt
        v = v + a * dt
    return min(max(l, 0.0), max_l), max(v, 0.0)
