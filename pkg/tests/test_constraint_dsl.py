from fractions import Fraction

import pytest

from scenorch.constraint_dsl import (
    BinOp,
    BoilerplateConfig,
    ConstraintAst,
    DurRef,
    Num,
    Param,
    Special,
    StateRef,
    boilerplate,
    lower,
    parse_scenario,
    pretty_print,
)
from scenorch.errors import DslParseError, LoweringError
from scenorch.lane_map import conflict_point, resolve_route
from scenorch.motion_profile import Order, PieceNamer, profile_from_skeleton
from scenorch.symbolic import evaluate
from tests.conftest import C1_BINDINGS, C1_TEXT, C2_BINDINGS, C2_TEXT


# ---------------------------------------------------------------------------
# parsing the appendix goldens


def test_parse_c1_documented_ast():
    prog = parse_scenario(C1_TEXT)
    assert [a.actor_id for a in prog.actors] == [0, 1]
    a0, a1 = prog.actors
    assert a0.route == ("W",)
    assert a0.skeleton == ("t0", "go", "t1", "go", "t2")
    assert a1.route == ("W", "N")
    assert a1.skeleton == ("t0", "go", "t1", "dec", "t2")
    assert len(prog.constraints) == 7
    assert {p.name for p in prog.parameters} == {
        "ego_initial_speed_mps",
        "initial_speed_mps",
        "distance_ahead_of_ego_m",
    }
    # spot-check two documented constraint shapes
    gap = prog.constraints[3]
    assert gap.relation == "=="
    assert gap.lhs == BinOp("-", StateRef(1, "x", "t1", True), StateRef(0, "x", "t1", True))
    assert gap.rhs == Param("distance_ahead_of_ego_m", "m")
    turn_pin = prog.constraints[4]
    assert turn_pin.lhs == StateRef(1, "x", "t1", True)
    assert turn_pin.rhs == Special("turn")
    shared = prog.constraints[6]
    assert shared.lhs == DurRef(0, "t1") and shared.rhs == DurRef(1, "t1")


def test_parse_c2_documented_ast():
    prog = parse_scenario(C2_TEXT)
    a1 = prog.actor(1)
    assert a1.skeleton == ("t0", "dec", "t1", "stop", "t2", "acc", "t3")
    assert len(prog.constraints) == 11
    dec_rate = prog.constraints[2]
    assert dec_rate.lhs == StateRef(1, "a", "dec", False)  # piece-rate accessor
    assert dec_rate.rhs == Param("deceleration_mpss", "mpss")
    assert {p.name for p in prog.parameters} == {
        "ego_initial_speed_mps",
        "initial_speed_mps",
        "deceleration_mpss",
        "distance_to_driveway_m",
    }
    strict = prog.constraints[9]
    assert strict.relation == ">"


def test_parse_accepts_quoted_knots_and_numbers():
    prog = parse_scenario(
        'Actor 0:\n- W\n- [t0, go, t1]\n\nConstraints:\nA0v("t0") == 5.5\n'
    )
    c = prog.constraints[0]
    assert c.lhs == StateRef(0, "v", "t0", True)
    assert c.rhs == Num(Fraction("5.5"))


def test_parse_errors_carry_line_numbers():
    with pytest.raises(DslParseError, match="line 3"):
        parse_scenario("Actor 0:\n- W\n- [t0, go]\n\nConstraints:\nA0v(t0) == 5")
    with pytest.raises(DslParseError, match="line 6"):
        parse_scenario("Actor 0:\n- W\n- [t0, go, t1]\n\nConstraints:\nA0v(t9) == 5")
    with pytest.raises(DslParseError, match="LHS"):
        parse_scenario("Actor 0:\n- W\n- [t0, go, t1]\n\nConstraints:\n5 == A0v(t0)")
    with pytest.raises(DslParseError, match="unknown identifier"):
        parse_scenario("Actor 0:\n- W\n- [t0, go, t1]\n\nConstraints:\nA0v(t0) == speedy")
    with pytest.raises(DslParseError, match="piece"):
        parse_scenario("Actor 0:\n- W\n- [t0, go, t1]\n\nConstraints:\nA0a(dec) == 1.0")


def test_pretty_print_round_trip_goldens():
    for text in (C1_TEXT, C2_TEXT):
        prog = parse_scenario(text)
        assert parse_scenario(pretty_print(prog)) == prog


# ---------------------------------------------------------------------------
# lowering


@pytest.fixture()
def c1_setup(t_graph):
    prog = parse_scenario(C1_TEXT)
    p0 = resolve_route(t_graph, ["W"])
    p1 = resolve_route(t_graph, ["W", "N"])
    conflict_point(p0, p1)
    namer = PieceNamer()
    profiles = {
        0: profile_from_skeleton(0, prog.actor(0).skeleton, namer),
        1: profile_from_skeleton(1, prog.actor(1).skeleton, namer),
    }
    return prog, profiles, {0: p0, 1: p1}


def test_lower_c1_zero_errors(c1_setup):
    prog, profiles, paths = c1_setup
    out = lower(prog, profiles, paths, C1_BINDINGS)
    assert len(out) == 7


def test_lower_c2_zero_errors(t_graph):
    prog = parse_scenario(C2_TEXT)
    p0 = resolve_route(t_graph, ["S", "W"])
    p1 = resolve_route(t_graph, ["W"])
    conflict_point(p0, p1)
    namer = PieceNamer()
    profiles = {
        0: profile_from_skeleton(0, prog.actor(0).skeleton, namer),
        1: profile_from_skeleton(1, prog.actor(1).skeleton, namer),
    }
    out = lower(prog, profiles, {0: p0, 1: p1}, C2_BINDINGS)
    assert len(out) == 11
    # A1a(dec) lowers to the dec piece's own acceleration rate variable
    dec_c = next(c for c in out if "A1a(dec)" in c.label)
    assert dec_c.variables() == (profiles[1].pieces[0].rates[Order.ACCELERATION].name,)


def test_lower_examples_and_tags(c1_setup):
    prog, profiles, paths = c1_setup
    out = lower(prog, profiles, paths, {**C1_BINDINGS, "ego_initial_speed_mps": 10})
    ego_v = out[0]
    # A0v(t0) == 10 lowers to the first go piece's velocity rate
    assert ego_v.initial and not ego_v.reactive
    atom = ego_v.atoms[0]
    assert atom.lhs == profiles[0].pieces[0].rates[Order.VELOCITY]
    assert evaluate(atom.rhs, {}) == 10
    # A0(t1) == A1(t1): duration equality across actors
    shared = out[6]
    assert set(shared.variables()) == {
        profiles[0].pieces[0].duration.name,
        profiles[1].pieces[0].duration.name,
    }
    # A1x(t1) == turn resolves to actor 1's registered conflict arclength
    turn_pin = out[4]
    assert turn_pin.reactive and turn_pin.positional
    assert evaluate(turn_pin.atoms[0].rhs, {}) == pytest.approx(
        paths[1].landmarks["lane_turn"]
    )


def test_lower_reports_unbound_parameter(c1_setup):
    prog, profiles, paths = c1_setup
    with pytest.raises(LoweringError, match="distance_ahead_of_ego_m"):
        lower(prog, profiles, paths, {"ego_initial_speed_mps": 10, "initial_speed_mps": 8})


def test_lower_missing_conflict_point(t_graph):
    text = "Actor 0:\n- W\n- [t0, go, t1]\n\nConstraints:\nA0x(t0) == conflict_point - 5\n"
    prog = parse_scenario(text)
    p0 = resolve_route(t_graph, ["W"])
    profiles = {0: profile_from_skeleton(0, prog.actor(0).skeleton)}
    with pytest.raises(LoweringError, match="conflict"):
        lower(prog, profiles, {0: p0}, {})


def test_lower_just_before_is_minus_five(t_graph):
    text = "Actor 0:\n- S, W\n- [t0, go, t1]\n\nConstraints:\nA0x(t0) == just_before(stop_line)\n"
    prog = parse_scenario(text)
    p0 = resolve_route(t_graph, ["S", "W"])
    profiles = {0: profile_from_skeleton(0, prog.actor(0).skeleton)}
    out = lower(prog, profiles, {0: p0}, {})
    assert evaluate(out[0].atoms[0].rhs, {}) == pytest.approx(
        p0.landmarks["stop_line"] - 5.0
    )


def test_lowered_variables_subset_of_profiles(c1_setup):
    prog, profiles, paths = c1_setup
    out = lower(prog, profiles, paths, C1_BINDINGS)
    out += boilerplate(profiles, paths)
    allowed = set(profiles[0].variables()) | set(profiles[1].variables())
    for c in out:
        assert set(c.variables()) <= allowed, c.label


# ---------------------------------------------------------------------------
# boilerplate


def test_boilerplate_counts_two_piece_profile(t_graph):
    path = resolve_route(t_graph, ["W"])
    profiles = {0: profile_from_skeleton(0, ["t0", "go", "t1", "go", "t2"])}
    out = boilerplate(profiles, {0: path})
    kinds = [c.label for c in out]
    assert sum("velocity bound" in k for k in kinds) == 2
    assert sum("acceleration bound" in k for k in kinds) == 2
    assert sum("duration bound" in k for k in kinds) == 2
    assert sum("horizon bound" in k for k in kinds) == 1
    assert sum("initial position" in k for k in kinds) == 1
    assert len(out) == 8


def test_boilerplate_horizon_bound_value(t_graph):
    path = resolve_route(t_graph, ["W"])
    profiles = {0: profile_from_skeleton(0, ["t0", "go", "t1"])}
    out = boilerplate(profiles, {0: path}, BoilerplateConfig(horizon=30.0))
    horizon = next(c for c in out if "horizon" in c.label)
    atom = horizon.atoms[0]
    assert atom.op == "<=" and evaluate(atom.rhs, {}) == 30


def test_boilerplate_dec_piece_acceleration_floor(t_graph):
    path = resolve_route(t_graph, ["W"])
    profiles = {0: profile_from_skeleton(0, ["t0", "dec", "t1"])}
    out = boilerplate(profiles, {0: path})
    acc = next(c for c in out if "acceleration bound" in c.label)
    lo = next(a for a in acc.atoms if a.op == ">=")
    assert evaluate(lo.rhs, {}) == -6
    # dec-first profiles also get an initial-velocity bound for the free v0
    assert any("initial velocity" in c.label for c in out)
