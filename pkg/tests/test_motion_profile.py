import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from scenorch.errors import (
    IncompleteAssignmentError,
    InvalidProfileError,
    ProfileError,
)
from scenorch.motion_profile import (
    ConcreteProfile,
    MotionProfile,
    Order,
    Piece,
    PieceNamer,
    Term,
    antiderivative,
    duration_to_knot,
    instantiate,
    piece_state,
    profile_from_skeleton,
    state_at_concrete,
    state_at_knot,
)
from scenorch.symbolic import Const, Var, ZERO, const, evaluate, exact_env, var


def frac_env(**kwargs):
    return {k: Fraction(str(v)) for k, v in kwargs.items()}


# ---------------------------------------------------------------------------
# antiderivative (the term-integration subroutine)


def test_antiderivative_constant():
    t = var("t")
    out = antiderivative(Term(const(5), t, 0))
    assert evaluate(out.expr, frac_env(t=3)) == 15
    assert out.order == 1
    assert out.var == t


def test_antiderivative_applies_half_coefficient_at_order_one():
    t = var("t")
    a = var("a")
    first = antiderivative(Term(a, t, 0))
    second = antiderivative(first)
    # a -> a*t -> 1/2*a*t^2
    assert second.order == 2
    assert evaluate(second.expr, frac_env(a=4, t=3)) == Fraction(18)


def test_antiderivative_double_integration_matches_derivative_oracle():
    # d^2/dt^2 of the double antiderivative of a constant must return it
    t = var("t")
    a0 = Fraction(7, 3)
    out = antiderivative(antiderivative(Term(const(a0), t, 0)))
    # second difference quotient of 1/2*a0*t^2 with exact arithmetic
    h = Fraction(1, 1000)
    f = lambda tv: evaluate(out.expr, {"t": tv})
    second = (f(2 + h) - 2 * f(Fraction(2)) + f(2 - h)) / (h * h)
    assert second == a0


def test_antiderivative_rejects_order_two():
    with pytest.raises(ProfileError):
        antiderivative(Term(const(1), var("t"), 2))


# ---------------------------------------------------------------------------
# piece_state (evaluating one piece at a local time)


def go_piece(v=5.0, name="go_1"):
    return Piece(name, "go", Order.VELOCITY, var(f"{name}_d"), (ZERO, const(v), ZERO))


def test_piece_state_go_no_carry():
    p = go_piece(5.0)
    expr = piece_state(p, 3, None, Order.POSITION)
    assert evaluate(expr, {}) == 15


def test_piece_state_acc_with_carry():
    p = Piece("acc_1", "acc", Order.ACCELERATION, var("d"), (ZERO, ZERO, const(2)))
    carry = (const(10), const(5), ZERO)
    expr = piece_state(p, 2, carry, Order.POSITION)
    # numeric integration oracle: x(t) = 10 + int_0^t (5 + 2s) ds
    steps = 20000
    h = 2.0 / steps
    x = 10.0
    for i in range(steps):
        s_mid = (i + 0.5) * h
        x += (5 + 2 * s_mid) * h
    val = float(evaluate(expr, {}))
    assert val == pytest.approx(24.0, abs=1e-9)
    assert val == pytest.approx(x, abs=1e-6)


def test_piece_state_stop_velocity_is_zero():
    p = Piece("stop_1", "stop", Order.POSITION, var("d"), (const(7), ZERO, ZERO))
    carry = (const(7), ZERO, ZERO)
    for t in (0, 1, 13):
        assert evaluate(piece_state(p, t, carry, Order.VELOCITY), {}) == 0


# ---------------------------------------------------------------------------
# state_at_knot (closed-form symbolic states)


def test_state_at_knot_single_go():
    prof = profile_from_skeleton(0, ["t0", "go", "t1"])
    expr = state_at_knot(prof, "t1", Order.POSITION)
    env = frac_env(A0_x0=3, go_1_v=5, go_1_d=4)
    assert evaluate(expr, env) == 23


def test_state_at_knot_velocity_chain():
    prof = profile_from_skeleton(0, ["t0", "go", "t1", "dec", "t2"])
    expr = state_at_knot(prof, "t2", Order.VELOCITY)
    env = frac_env(A0_x0=0, go_1_v=8, go_1_d=5, dec_2_a=-2, dec_2_d=3)
    assert evaluate(expr, env) == 2  # v_go + a_dec * d_dec


def test_state_at_knot_acc_first_includes_initial_velocity_rate():
    prof = profile_from_skeleton(0, ["t0", "acc", "t1"])
    assert "acc_1_v0" in prof.variables()
    expr = state_at_knot(prof, "t1", Order.POSITION)
    env = frac_env(A0_x0=1, acc_1_v0=2, acc_1_a=4, acc_1_d=3)
    # x0 + v0*d + 1/2*a*d^2
    assert evaluate(expr, env) == 1 + 2 * 3 + Fraction(1, 2) * 4 * 9


def test_state_at_knot_unknown_knot():
    prof = profile_from_skeleton(0, ["t0", "go", "t1"])
    with pytest.raises(ProfileError):
        state_at_knot(prof, "t9", Order.POSITION)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_state_at_knot_matches_concrete_under_random_assignment(seed):
    """Substitution oracle: knot expressions equal concrete-time evaluation
    at the cumulative duration (left limit for interior knots)."""
    import random

    rng = random.Random(seed)
    bases = ["go", "acc", "dec", "stop"]
    n_pieces = rng.randint(1, 4)
    skeleton = ["t0"]
    for i in range(n_pieces):
        skeleton += [rng.choice(bases), f"t{i + 1}"]
    prof = profile_from_skeleton(7, skeleton)
    env = {}
    for name in prof.variables():
        if name.endswith("_d"):
            env[name] = Fraction(rng.randint(1, 800), 100)
        elif name.endswith("_a"):
            env[name] = Fraction(rng.randint(-600, 400), 100)
        else:
            env[name] = Fraction(rng.randint(0, 2000), 100)
    eps = Fraction(1, 10**15)
    for j, knot in enumerate(prof.knots):
        t_knot = sum(
            (env[p.duration.name] for p in prof.pieces[:j]), Fraction(0)
        )
        if 0 < j < len(prof.knots) - 1:
            t_query = t_knot - eps * max(Fraction(1), t_knot)
        else:
            t_query = t_knot
        for order in Order:
            lhs = evaluate(state_at_knot(prof, knot, order), env)
            rhs = evaluate(state_at_concrete(prof, t_query, order), env)
            assert abs(float(lhs - rhs)) <= 1e-9 * (1 + abs(float(lhs)))


# ---------------------------------------------------------------------------
# state_at_concrete (nested conditional over symbolic durations)


@pytest.fixture()
def two_piece():
    prof = profile_from_skeleton(0, ["t0", "go", "t1", "acc", "t2"])
    env = exact_env({"A0_x0": 0, "go_1_v": 5, "go_1_d": 2, "acc_2_a": 2, "acc_2_d": 3})
    return prof, env


def test_concrete_position_inside_second_piece(two_piece):
    prof, env = two_piece
    assert evaluate(state_at_concrete(prof, 4, Order.POSITION), env) == 24


def test_concrete_velocity_inside_first_piece(two_piece):
    prof, env = two_piece
    assert evaluate(state_at_concrete(prof, 1, Order.VELOCITY), env) == 5


def test_concrete_extrapolates_beyond_horizon(two_piece):
    prof, env = two_piece
    # last piece keeps integrating: 10 + 5*8 + 1/2*2*64 = 114
    assert evaluate(state_at_concrete(prof, 10, Order.POSITION), env) == 114


def test_concrete_rejects_negative_time(two_piece):
    prof, _ = two_piece
    with pytest.raises(ProfileError):
        state_at_concrete(prof, -1.0, Order.POSITION)


# ---------------------------------------------------------------------------
# duration_to_knot


def test_duration_examples():
    prof = profile_from_skeleton(0, ["t0", "go", "t1", "dec", "t2"])
    assert duration_to_knot(prof, "t0") == ZERO
    total = duration_to_knot(prof, "t2")
    env = frac_env(go_1_d=2, dec_2_d=3)
    assert evaluate(total, env) == 5
    with pytest.raises(ProfileError):
        duration_to_knot(prof, "t7")


# ---------------------------------------------------------------------------
# instantiate / ConcreteProfile


def test_instantiate_single_go():
    prof = profile_from_skeleton(0, ["t0", "go", "t1"])
    cp = instantiate(prof, {"A0_x0": 0, "go_1_v": 5, "go_1_d": 10})
    assert cp.state(10.0)[0] == pytest.approx(50.0)
    assert cp.total_duration == pytest.approx(10.0)


def test_instantiate_missing_variable():
    prof = profile_from_skeleton(0, ["t0", "go", "t1"])
    with pytest.raises(IncompleteAssignmentError):
        instantiate(prof, {"A0_x0": 0, "go_1_v": 5})


def test_instantiate_negative_duration():
    prof = profile_from_skeleton(0, ["t0", "go", "t1"])
    with pytest.raises(InvalidProfileError):
        instantiate(prof, {"A0_x0": 0, "go_1_v": 5, "go_1_d": -1})


def test_sample_constant_velocity():
    prof = profile_from_skeleton(0, ["t0", "go", "t1"])
    cp = instantiate(prof, {"A0_x0": 0, "go_1_v": 5, "go_1_d": 10})
    pts = cp.sample(1.0, 3.0)
    assert [p for _, p, _, _ in pts] == pytest.approx([0, 5, 10, 15])


def test_sample_two_piece_and_stop(two_piece):
    prof, env = two_piece
    cp = instantiate(prof, env)
    pts = cp.sample(1.0, 5.0)
    assert pts[4][1] == pytest.approx(24.0, abs=1e-9)
    stop_prof = profile_from_skeleton(0, ["t0", "stop", "t1"])
    cp2 = instantiate(stop_prof, {"A0_x0": 4, "stop_1_d": 2})
    assert [p for _, p, _, _ in cp2.sample(0.5, 3.0)] == pytest.approx([4.0] * 7)


def test_skeleton_validation():
    with pytest.raises(ProfileError):
        profile_from_skeleton(0, ["t0", "go"])  # no closing knot
    with pytest.raises(ProfileError):
        profile_from_skeleton(0, ["t0", "warp", "t1"])


def test_lifted_profiles_get_fresh_unique_names():
    namer = PieceNamer()
    plain = profile_from_skeleton(0, ["t0", "go", "t1", "go", "t2"], namer)
    lifted = profile_from_skeleton(1, ["t0", "go", "t1", "go", "t2"], namer, lift_orders=True)
    names = [p.name for p in plain.pieces] + [p.name for p in lifted.pieces]
    assert len(set(names)) == 4
    assert all(p.order == Order.ACCELERATION for p in lifted.pieces)
    # lifted first piece gains a free initial-velocity rate
    assert any(v.endswith("_v0") for v in lifted.variables())


# ---------------------------------------------------------------------------
# spec invariants as property tests


def random_concrete(rng, max_pieces=5):
    bases = ["go", "acc", "dec", "stop"]
    n = rng.randint(1, max_pieces)
    skeleton = ["t0"]
    for i in range(n):
        skeleton += [rng.choice(bases), f"t{i + 1}"]
    prof = profile_from_skeleton(0, skeleton)
    env = {}
    for name in prof.variables():
        if name.endswith("_d"):
            env[name] = Fraction(rng.randint(20, 1000), 100)
        elif name.endswith("_a"):
            env[name] = Fraction(rng.randint(-600, 600), 100)
        else:
            env[name] = Fraction(rng.randint(0, 2000), 100)
    return prof, env


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_concrete_matches_closed_form_kinematics(seed):
    """Eq.-style closed-form oracle: accumulate piece end states directly."""
    import random

    rng = random.Random(seed)
    prof, env = random_concrete(rng)
    cp = instantiate(prof, env)
    times = cp.knot_times
    # independent accumulation
    for _ in range(20):
        t = rng.uniform(0.0, times[-1] * 1.1 + 0.5)
        idx = len(cp.pieces) - 1
        for j in range(len(cp.pieces) - 1):
            if times[j] <= t < times[j + 1]:
                idx = j
                break
        p0, v0, a0 = cp.pieces[idx].rates
        tau = t - times[idx]
        expect = p0 + v0 * tau + 0.5 * a0 * tau * tau
        got = cp.state(t)[0]
        assert abs(got - expect) <= 1e-9 * (1 + abs(expect))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_continuity_at_interior_knots(seed):
    """Position continuity always; velocity continuity into acceleration
    pieces (orders below the incoming piece's order are inherited)."""
    import random

    rng = random.Random(seed)
    prof, env = random_concrete(rng)
    cp = instantiate(prof, env)
    times = cp.knot_times
    for j in range(1, len(cp.pieces) + 1):
        if j == len(cp.pieces):
            break
        t = times[j]
        before = cp.state(t - 1e-9)
        after = cp.state(t + 1e-9)
        incoming = cp.pieces[j].order
        for o in range(int(incoming)):
            scale = 1 + abs(before[o])
            assert abs(before[o] - after[o]) <= 1e-6 * scale
    assert all(j <= 1e-9 for j in cp.continuity_report)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_sampled_velocity_matches_position_derivative(seed):
    import random

    rng = random.Random(seed)
    prof, env = random_concrete(rng, max_pieces=3)
    cp = instantiate(prof, env)
    times = cp.knot_times
    h = 1e-4
    for _ in range(10):
        t = rng.uniform(0.0, max(times[-1] - h, h))
        # keep away from knots where one-sided derivatives differ
        if any(abs(t - kt) < 5 * h for kt in times):
            continue
        v = cp.state(t)[1]
        dpos = (cp.state(t + h)[0] - cp.state(t - h)[0]) / (2 * h)
        assert abs(v - dpos) <= 1e-4 * (1 + abs(v))


def test_state_held_parks_braking_final_piece():
    prof = profile_from_skeleton(0, ["t0", "go", "t1", "dec", "t2"])
    cp = instantiate(prof, {"A0_x0": 0, "go_1_v": 8, "go_1_d": 5, "dec_2_a": -4, "dec_2_d": 2})
    # raw extrapolation reverses; held sampling parks at the stop point
    assert cp.state(10.0)[1] < 0
    held = cp.state_held(10.0)
    assert held[1] == 0.0
    assert held[0] == pytest.approx(40 + 8.0 * 2 - 0.5 * 4 * 4)
