"""Piecewise-polynomial motion profiles along a path.

An actor's longitudinal motion is a sequence of named knots t0..tK with a
polynomial piece between consecutive knots. Each piece carries one free
rate variable at its own order (go = constant velocity, acc/dec = constant
acceleration, stop = pinned position) plus a free duration; the profile
additionally owns the initial position x0 and, when the first piece is
acceleration-order, a free initial velocity. States at knots are built as
closed-form expressions by telescoping antiderivatives across pieces;
states at concrete times become nested conditionals guarded by the (still
symbolic) piece durations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from typing import Mapping, Sequence

from .errors import IncompleteAssignmentError, InvalidProfileError, ProfileError
from .symbolic import (
    Const,
    Expr,
    Numeric,
    Var,
    ZERO,
    add,
    as_expr,
    cmp,
    conj,
    const,
    evaluate,
    exact_env,
    free_vars,
    ite,
    mul,
    to_fraction,
    var,
)


class Order(IntEnum):
    POSITION = 0
    VELOCITY = 1
    ACCELERATION = 2


PIECE_ORDERS: dict[str, Order] = {
    "go": Order.VELOCITY,
    "acc": Order.ACCELERATION,
    "dec": Order.ACCELERATION,
    "stop": Order.POSITION,
}


@dataclass(frozen=True, slots=True)
class Term:
    """One monomial of the telescoped state expression.

    expr is the full monomial value so far; var is the duration symbol the
    next integration multiplies in; order counts integrations applied.
    """

    expr: Expr
    var: Expr
    order: int


def antiderivative(term: Term) -> Term:
    """Integrate a term once: max(1,o)/(o+1) * expr * var, order o+1.

    The coefficient equals the factorial antiderivative factor only for
    o in {0, 1}; with state and piece orders both capped at 2 no deeper
    integration is reachable, and o = 2 input is rejected outright.
    """
    if term.order not in (0, 1):
        raise ProfileError(f"antiderivative undefined for term order {term.order}")
    coeff = Fraction(max(1, term.order), term.order + 1)
    return Term(mul(const(coeff), term.expr, term.var), term.var, term.order + 1)


@dataclass(frozen=True, slots=True)
class Piece:
    """One polynomial segment.

    rates is indexed by Order: the entry at `order` is the piece's own
    rate, entries above are fixed zero, entries below are zero except for
    the first piece of a profile (initial conditions) and stop pieces
    (position carried through symbolically).
    """

    name: str
    base: str
    order: Order
    duration: Expr
    rates: tuple[Expr, Expr, Expr]


def piece_state(
    piece: Piece,
    t_local,
    rates_in: Sequence[Expr] | None,
    order: Order,
) -> Expr:
    """State of `order` inside a piece at local time t (symbolic or concrete).

    Carried rates merge with the piece's own: below the piece's order the
    two add, at the piece's order the piece's own rate wins, above it the
    state is zero.
    """
    t_local = as_expr(t_local)
    if rates_in is not None:
        merged = []
        for o in range(piece.order + 1):
            own = piece.rates[o]
            merged.append(add(own, rates_in[o]) if o < piece.order else own)
    else:
        merged = list(piece.rates[: piece.order + 1])
    total: Expr = ZERO
    for k in range(order, piece.order + 1):
        power = k - order
        if power == 0:
            term = merged[k]
        elif power == 1:
            term = mul(merged[k], t_local)
        else:
            term = mul(const(Fraction(1, math.factorial(power))), merged[k], t_local, t_local)
        total = add(total, term)
    return total


@dataclass(frozen=True)
class MotionProfile:
    """Knot-delimited piece sequence for one actor, all symbols free."""

    actor_id: int
    knots: tuple[str, ...]
    pieces: tuple[Piece, ...]
    initial_position: Expr

    def __post_init__(self):
        if len(self.pieces) != len(self.knots) - 1:
            raise ProfileError(
                f"{len(self.pieces)} pieces need {len(self.pieces) + 1} knots, got {len(self.knots)}"
            )
        if len(set(self.knots)) != len(self.knots):
            raise ProfileError(f"duplicate knot names in {self.knots}")
        names = [p.name for p in self.pieces]
        if len(set(names)) != len(names):
            raise ProfileError(f"duplicate piece names in {names}")

    def knot_index(self, knot: str) -> int:
        try:
            return self.knots.index(knot)
        except ValueError:
            raise ProfileError(f"unknown knot {knot!r} (actor {self.actor_id})") from None

    def piece_by_base(self, base: str) -> Piece:
        matches = [p for p in self.pieces if p.base == base]
        if not matches:
            raise ProfileError(f"actor {self.actor_id} has no piece named {base!r}")
        if len(matches) > 1:
            raise ProfileError(f"piece name {base!r} is ambiguous for actor {self.actor_id}")
        return matches[0]

    def variables(self) -> tuple[str, ...]:
        """Free variable names in deterministic declaration order."""
        seen: list[str] = []
        have: set[str] = set()

        def take(e: Expr):
            for name in free_vars(e):
                if name not in have:
                    have.add(name)
                    seen.append(name)

        take(self.initial_position)
        for p in self.pieces:
            for r in p.rates:
                take(r)
            take(p.duration)
        return tuple(seen)


def profile_from_skeleton(
    actor_id: int,
    skeleton: Sequence[str],
    name_suffixes: "PieceNamer | None" = None,
    lift_orders: bool = False,
) -> MotionProfile:
    """Build a profile from an interleaved [knot, piece, knot, ...] skeleton.

    lift_orders raises every piece one order toward ACCELERATION (the ego
    future model used during closed-loop rollouts); names stay globally
    unique through the shared namer.
    """
    if len(skeleton) < 3 or len(skeleton) % 2 == 0:
        raise ProfileError(f"skeleton must alternate knot, piece, ..., knot: {skeleton}")
    knots = tuple(skeleton[0::2])
    bases = tuple(skeleton[1::2])
    namer = name_suffixes or PieceNamer()
    x0 = var(f"A{actor_id}_x0")
    pieces: list[Piece] = []
    # Running symbolic state at the previous knot, used for stop-piece carry.
    state: tuple[Expr, Expr, Expr] | None = None
    for idx, base in enumerate(bases):
        if base not in PIECE_ORDERS:
            raise ProfileError(f"unknown piece kind {base!r}")
        order = PIECE_ORDERS[base]
        if lift_orders and order < Order.ACCELERATION:
            order = Order(order + 1)
        pname = namer.fresh(base)
        duration = var(f"{pname}_d")
        rates: list[Expr] = [ZERO, ZERO, ZERO]
        if order == Order.POSITION:
            # Stop pieces pin position: carry-through, no fresh rate variable.
            rates[0] = x0 if idx == 0 else state[0]
        else:
            rates[order] = var(f"{pname}_{'v' if order == Order.VELOCITY else 'a'}")
            if idx == 0:
                rates[0] = x0
                if order == Order.ACCELERATION:
                    rates[1] = var(f"{pname}_v0")
        piece = Piece(pname, base, order, duration, tuple(rates))
        carry = None if idx == 0 else state
        state = tuple(
            piece_state(piece, duration, carry, Order(o)) for o in range(3)
        )
        pieces.append(piece)
    return MotionProfile(actor_id, knots, tuple(pieces), x0)


class PieceNamer:
    """Allocates globally unique piece names: base + running counter."""

    def __init__(self):
        self._n = 0

    def fresh(self, base: str) -> str:
        self._n += 1
        return f"{base}_{self._n}"


def state_at_knot(profile: MotionProfile, knot: str, order: Order) -> Expr:
    """Closed-form state expression at a named knot (left limit).

    Telescopes antiderivative terms across the piece ending at the knot,
    chaining lower-order initial conditions through the previous knot's
    states; at t0 the first piece's rates are read directly.
    """
    cache: dict[tuple[int, int], Expr] = {}

    def at(i: int, o: int) -> Expr:
        key = (i, o)
        if key in cache:
            return cache[key]
        if i == 0:
            piece = profile.pieces[0]
            result = piece.rates[o] if o <= piece.order else ZERO
        else:
            piece = profile.pieces[i - 1]
            terms: list[Term] = []
            for q in range(piece.order, o - 1, -1):
                terms = [antiderivative(t) for t in terms]
                if q == piece.order:
                    expr = piece.rates[q]
                else:
                    expr = at(i - 1, q)
                terms.append(Term(expr, piece.duration, 0))
            result = add(*(t.expr for t in terms)) if terms else ZERO
        cache[key] = result
        return result

    return at(profile.knot_index(knot), int(order))


def duration_to_knot(profile: MotionProfile, knot: str) -> Expr:
    """Sum of piece durations strictly before the knot; t0 maps to 0."""
    i = profile.knot_index(knot)
    return add(*(p.duration for p in profile.pieces[:i])) if i else ZERO


def state_at_concrete(profile: MotionProfile, t: Numeric, order: Order) -> Expr:
    """State at a concrete time as a nested conditional over symbolic durations.

    Pieces guard with t in [lo, hi) except the last, which extrapolates
    beyond the horizon under a bare t >= lo guard; the innermost branch
    carries the state at the end of the final piece.
    """
    if to_fraction(t) < 0:
        raise ProfileError(f"concrete time must be nonnegative: {t}")
    t_expr = as_expr(t)
    n = len(profile.pieces)

    def make(idx: int, rates: tuple[Expr, Expr, Expr], offset: Expr) -> Expr:
        if idx == n:
            return rates[order]
        head = profile.pieces[idx]
        lo = offset
        hi = add(offset, head.duration)
        if idx == n - 1:
            guard = cmp(">=", t_expr, lo)
        else:
            guard = conj(cmp(">=", t_expr, lo), cmp("<", t_expr, hi))
        local = add(t_expr, mul(const(-1), lo))
        then_expr = piece_state(head, local, rates, order)
        next_rates = tuple(
            piece_state(head, head.duration, rates, Order(o)) for o in range(3)
        )
        else_expr = make(idx + 1, next_rates, hi)
        return ite(guard, then_expr, else_expr)

    return make(0, (ZERO, ZERO, ZERO), ZERO)


@dataclass(frozen=True)
class ConcretePiece:
    name: str
    base: str
    order: Order
    duration: float
    rates: tuple[float, float, float]  # merged start state of the piece


@dataclass(frozen=True)
class ConcreteProfile:
    """A motion profile with every symbol bound to a value."""

    actor_id: int
    knots: tuple[str, ...]
    pieces: tuple[ConcretePiece, ...]
    initial_position: float
    assignment: Mapping[str, Fraction] = field(repr=False)
    continuity_report: tuple[float, ...] = ()  # max state jump per interior knot

    @property
    def knot_times(self) -> tuple[float, ...]:
        times = [0.0]
        for p in self.pieces:
            times.append(times[-1] + p.duration)
        return tuple(times)

    @property
    def total_duration(self) -> float:
        return sum(p.duration for p in self.pieces)

    def piece_index_at(self, t: float) -> int:
        """Index of the piece owning time t (half-open; last piece closed)."""
        times = self.knot_times
        for j in range(len(self.pieces) - 1):
            if times[j] <= t < times[j + 1]:
                return j
        return len(self.pieces) - 1

    def state(self, t: float) -> tuple[float, float, float]:
        """(position, velocity, acceleration) at time t >= 0.

        Piece intervals are half-open per the concrete-time semantics; the
        final piece extrapolates for t beyond the profile end.
        """
        times = self.knot_times
        idx = self.piece_index_at(t)
        piece = self.pieces[idx]
        tau = t - times[idx]
        p0, v0, a0 = piece.rates
        return (
            p0 + v0 * tau + 0.5 * a0 * tau * tau,
            v0 + a0 * tau,
            a0,
        )

    def state_held(self, t: float) -> tuple[float, float, float]:
        """Like state(), but a braking final piece parks at its v = 0 instant.

        The raw extrapolation semantics run the last piece's polynomial
        forever, which drives a decelerating actor backwards once its
        velocity crosses zero; execution-facing sampling holds the stop
        instead.
        """
        times = self.knot_times
        last_start = times[-2] if len(times) >= 2 else 0.0
        p0, v0, a0 = self.pieces[-1].rates
        if a0 < 0 and v0 >= 0 and t >= last_start:
            tau_stop = v0 / -a0
            if t - last_start >= tau_stop:
                pos = p0 + v0 * tau_stop + 0.5 * a0 * tau_stop * tau_stop
                return (pos, 0.0, 0.0)
        return self.state(t)

    def evaluate(self, t: float, order: Order) -> float:
        return self.state(t)[int(order)]

    def sample(self, dt: float, horizon: float) -> list[tuple[float, float, float, float]]:
        """(t, position, velocity, acceleration) at t = 0, dt, 2dt, ... <= horizon."""
        if dt <= 0:
            raise ProfileError(f"dt must be positive: {dt}")
        out = []
        n = int(math.floor(horizon / dt + 1e-9))
        for k in range(n + 1):
            t = k * dt
            p, v, a = self.state(t)
            out.append((t, p, v, a))
        return out

    def to_records(self) -> list[dict]:
        return [
            {
                "name": p.name,
                "order": int(p.order),
                "duration": p.duration,
                "rates": list(p.rates),
            }
            for p in self.pieces
        ]


def instantiate(profile: MotionProfile, assignment: Mapping[str, Numeric]) -> ConcreteProfile:
    """Bind every free variable, checking durations and reporting continuity."""
    needed = profile.variables()
    missing = [n for n in needed if n not in assignment]
    if missing:
        raise IncompleteAssignmentError(
            f"assignment missing variables for actor {profile.actor_id}: {missing}"
        )
    env = exact_env({k: assignment[k] for k in needed})
    pieces: list[ConcretePiece] = []
    carry: tuple[Fraction, Fraction, Fraction] | None = None
    prev_order: Order | None = None
    jumps: list[float] = []
    for idx, piece in enumerate(profile.pieces):
        d = evaluate(piece.duration, env)
        if d < 0:
            raise InvalidProfileError(
                f"piece {piece.name} has negative duration {float(d):.6g}"
            )
        own = [evaluate(r, env) for r in piece.rates]
        if carry is None:
            merged = own[: piece.order + 1]
        else:
            merged = [
                own[o] + carry[o] if o < piece.order else own[o]
                for o in range(piece.order + 1)
            ]
        merged = merged + [Fraction(0)] * (3 - len(merged))
        if carry is not None:
            # jump across the knot at orders below min(order_k, order_{k+1})
            shared = range(min(prev_order, piece.order))
            jumps.append(max((abs(float(merged[o] - carry[o])) for o in shared), default=0.0))
        end = (
            merged[0] + merged[1] * d + Fraction(1, 2) * merged[2] * d * d,
            merged[1] + merged[2] * d,
            merged[2],
        )
        pieces.append(
            ConcretePiece(
                piece.name,
                piece.base,
                piece.order,
                float(d),
                (float(merged[0]), float(merged[1]), float(merged[2])),
            )
        )
        carry = end
        prev_order = piece.order
    return ConcreteProfile(
        actor_id=profile.actor_id,
        knots=profile.knots,
        pieces=tuple(pieces),
        initial_position=float(evaluate(profile.initial_position, env)),
        assignment=env,
        continuity_report=tuple(jumps),
    )
