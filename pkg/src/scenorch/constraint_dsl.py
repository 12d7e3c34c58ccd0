"""Scenario pseudocode parser and constraint lowering.

The input format mirrors the benchmark's hand-written scenario programs:

    Actor 0:
    - W
    - [t0, go, t1, go, t2]
    Actor 1:
    - W, N
    - [t0, go, t1, dec, t2]

    Constraints:
    A0v(t0) == ego_initial_speed_mps
    A1x(t1) - A0x(t1) == distance_ahead_of_ego_m

Accessors: A{i}x/v/a("t{j}") reads a state at a knot (quotes optional),
A{i}v/a(piece) reads a piece's own rate, A{i}("t{j}") the duration up to a
knot. Identifiers ending in a unit suffix (_m, _s, _mps, _mpss) are
scenario parameters; the special constants stop_line, conflict_point,
turn_start, turn_end, turn and lane_start resolve to per-actor path
landmarks, and just_before(L) lowers to L - 5.0.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .errors import DslParseError, LoweringError
from .lane_map import RoutePath
from .motion_profile import (
    MotionProfile,
    Order,
    PIECE_ORDERS,
    duration_to_knot,
    state_at_knot,
)
from .symbolic import Const, Expr, Numeric, add, cmp, const, free_vars, mul, to_fraction

UNIT_SUFFIXES = ("_mpss", "_mps", "_m", "_s")
SPECIAL_CONSTANTS = (
    "stop_line",
    "conflict_point",
    "turn_start",
    "turn_end",
    "turn",
    "lane_start",
)
RELATIONS = ("==", "<=", ">=", "<", ">")
KIND_ORDERS = {"x": Order.POSITION, "v": Order.VELOCITY, "a": Order.ACCELERATION}


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: Fraction


@dataclass(frozen=True)
class Param:
    name: str
    unit: str


@dataclass(frozen=True)
class Special:
    name: str


@dataclass(frozen=True)
class JustBefore:
    inner: Special


@dataclass(frozen=True)
class StateRef:
    actor: int
    kind: str  # x, v, a
    ref: str  # knot or piece base name
    is_knot: bool


@dataclass(frozen=True)
class DurRef:
    actor: int
    knot: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # + - *
    lhs: "Node"
    rhs: "Node"


Node = Num | Param | Special | JustBefore | StateRef | DurRef | Neg | BinOp


@dataclass(frozen=True)
class ConstraintAst:
    lhs: Node
    relation: str
    rhs: Node
    line: int
    text: str


@dataclass(frozen=True)
class ActorDecl:
    actor_id: int
    route: tuple[str, ...]
    skeleton: tuple[str, ...]

    @property
    def knots(self) -> tuple[str, ...]:
        return self.skeleton[0::2]

    @property
    def piece_bases(self) -> tuple[str, ...]:
        return self.skeleton[1::2]


@dataclass(frozen=True)
class ScenarioProgram:
    actors: tuple[ActorDecl, ...]
    constraints: tuple[ConstraintAst, ...]
    parameters: tuple[Param, ...]

    def actor(self, actor_id: int) -> ActorDecl:
        for a in self.actors:
            if a.actor_id == actor_id:
                return a
        raise LoweringError(f"program has no actor {actor_id}")


# ---------------------------------------------------------------------------
# Tokenizer / expression parser

_TOKEN_RE = re.compile(
    r"""
    (?P<num>\d+(?:\.\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|<=|>=|<|>|[-+*()])
  | (?P<str>"[^"]*")
  | (?P<comma>,)
  | (?P<ws>\s+)
""",
    re.VERBOSE,
)


def _tokenize(text: str, line: int) -> list[tuple[str, str]]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise DslParseError(f"unexpected character {text[pos]!r}", line)
        pos = m.end()
        kind = m.lastgroup
        if kind == "ws":
            continue
        out.append((kind, m.group()))
    return out


class _ExprParser:
    def __init__(self, tokens: list[tuple[str, str]], line: int):
        self.toks = tokens
        self.i = 0
        self.line = line

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, tok = self.take()
        if tok != value:
            raise DslParseError(f"expected {value!r}, found {tok!r}", self.line)

    def parse_constraint(self) -> tuple[Node, str, Node]:
        lhs = self.parse_expr()
        kind, rel = self.take()
        if rel not in RELATIONS:
            raise DslParseError(f"expected a relation, found {rel!r}", self.line)
        rhs = self.parse_expr()
        if self.peek()[0] is not None:
            raise DslParseError(f"trailing input {self.peek()[1]!r}", self.line)
        return lhs, rel, rhs

    def parse_expr(self) -> Node:
        node = self.parse_term()
        while self.peek()[1] in ("+", "-"):
            _, op = self.take()
            node = BinOp(op, node, self.parse_term())
        return node

    def parse_term(self) -> Node:
        node = self.parse_factor()
        while self.peek()[1] == "*":
            self.take()
            node = BinOp("*", node, self.parse_factor())
        return node

    def parse_factor(self) -> Node:
        if self.peek()[1] == "-":
            self.take()
            return Neg(self.parse_factor())
        return self.parse_atom()

    def parse_atom(self) -> Node:
        kind, tok = self.take()
        if tok == "(":
            node = self.parse_expr()
            self.expect(")")
            return node
        if kind == "num":
            return Num(Fraction(tok))
        if kind == "ident":
            if self.peek()[1] == "(":
                return self._call(tok)
            return self._bare_ident(tok)
        raise DslParseError(f"unexpected token {tok!r}", self.line)

    def _bare_ident(self, name: str) -> Node:
        for suffix in UNIT_SUFFIXES:
            if name.endswith(suffix) and len(name) > len(suffix):
                return Param(name, suffix[1:])
        if name in SPECIAL_CONSTANTS:
            return Special(name)
        raise DslParseError(
            f"unknown identifier {name!r} (not a parameter with unit suffix nor a special constant)",
            self.line,
        )

    def _call(self, name: str) -> Node:
        self.expect("(")
        if name == "just_before":
            inner = self.parse_atom()
            if not isinstance(inner, Special):
                raise DslParseError("just_before() takes a special constant", self.line)
            self.expect(")")
            return JustBefore(inner)
        m = re.fullmatch(r"A(\d+)([xva]?)", name)
        if not m:
            raise DslParseError(f"unknown accessor form {name!r}", self.line)
        actor = int(m.group(1))
        kind = m.group(2)
        tkind, tok = self.take()
        if tkind == "str":
            ref = tok.strip('"')
        elif tkind == "ident":
            ref = tok
        else:
            raise DslParseError(f"accessor argument must be a name, found {tok!r}", self.line)
        self.expect(")")
        is_knot = bool(re.fullmatch(r"t\d+", ref))
        if not kind:
            if not is_knot:
                raise DslParseError(
                    f"duration accessor A{actor}({ref}) needs a knot name", self.line
                )
            return DurRef(actor, ref)
        if not is_knot and ref not in PIECE_ORDERS:
            raise DslParseError(f"unknown knot or piece name {ref!r}", self.line)
        if not is_knot and kind == "x" and ref == "stop":
            # position of a stop piece reads its pinned position; allowed
            pass
        return StateRef(actor, kind, ref, is_knot)


# ---------------------------------------------------------------------------
# Program parser

_ACTOR_RE = re.compile(r"^Actor\s+(\d+)\s*:\s*$")
_BULLET_RE = re.compile(r"^-\s*(.+)$")


def parse_scenario(text: str) -> ScenarioProgram:
    """Parse a scenario program; errors carry 1-based line numbers."""
    actors: list[ActorDecl] = []
    constraints: list[ConstraintAst] = []
    mode = "actors"
    current: tuple[int, int, list] | None = None  # id, line, [(line, bullet)]

    def close_actor():
        nonlocal current
        if current is None:
            return
        actor_id, line, bullets = current
        if len(bullets) != 2:
            raise DslParseError(
                f"Actor {actor_id} needs a route bullet and a trajectory bullet", line
            )
        (route_line, route_text), (skel_line, skel_text) = bullets
        route = tuple(p.strip() for p in route_text.split(",") if p.strip())
        if not route or any(r not in ("N", "E", "S", "W") for r in route):
            raise DslParseError(f"bad route {route_text!r} for actor {actor_id}", route_line)
        skeleton = _parse_skeleton(skel_text, skel_line)
        actors.append(ActorDecl(actor_id, route, skeleton))
        current = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if mode == "actors":
            m = _ACTOR_RE.match(line)
            if m:
                close_actor()
                current = (int(m.group(1)), lineno, [])
                continue
            if line.lower().startswith("constraints"):
                close_actor()
                mode = "constraints"
                continue
            m = _BULLET_RE.match(line)
            if m and current is not None:
                current[2].append((lineno, m.group(1).strip()))
                continue
            raise DslParseError(f"unparsed line {line!r}", lineno)
        else:
            tokens = _tokenize(line, lineno)
            lhs, rel, rhs = _ExprParser(tokens, lineno).parse_constraint()
            constraints.append(ConstraintAst(lhs, rel, rhs, lineno, line))
    close_actor()

    if not actors:
        raise DslParseError("no actor declarations found", 1)
    ids = [a.actor_id for a in actors]
    if len(set(ids)) != len(ids):
        raise DslParseError(f"duplicate actor ids {ids}", 1)
    _validate_references(actors, constraints)
    params = _collect_parameters(constraints)
    return ScenarioProgram(tuple(actors), tuple(constraints), params)


def _parse_skeleton(text: str, line: int) -> tuple[str, ...]:
    text = text.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise DslParseError(f"trajectory must be a [t0, piece, t1, ...] list: {text!r}", line)
    items = tuple(p.strip() for p in text[1:-1].split(",") if p.strip())
    if len(items) < 3 or len(items) % 2 == 0:
        raise DslParseError(
            f"trajectory must alternate knot, piece, ..., knot: {items}", line
        )
    for idx, item in enumerate(items):
        if idx % 2 == 0:
            if not re.fullmatch(r"t\d+", item):
                raise DslParseError(f"expected a knot name at position {idx}: {item!r}", line)
        else:
            if item not in PIECE_ORDERS:
                raise DslParseError(f"unknown piece kind {item!r}", line)
    return items


def _walk(node: Node):
    yield node
    if isinstance(node, Neg):
        yield from _walk(node.arg)
    elif isinstance(node, BinOp):
        yield from _walk(node.lhs)
        yield from _walk(node.rhs)
    elif isinstance(node, JustBefore):
        yield node.inner


def _validate_references(actors: Sequence[ActorDecl], constraints: Sequence[ConstraintAst]):
    by_id = {a.actor_id: a for a in actors}
    for c in constraints:
        has_state = False
        for node in _walk(c.lhs):
            if isinstance(node, (StateRef, DurRef)):
                has_state = True
        if not has_state:
            raise DslParseError(
                "constraint LHS must involve an actor state", c.line
            )
        for node in [*_walk(c.lhs), *_walk(c.rhs)]:
            if isinstance(node, (StateRef, DurRef)):
                actor = by_id.get(node.actor)
                if actor is None:
                    raise DslParseError(f"unknown actor id {node.actor}", c.line)
                ref = node.knot if isinstance(node, DurRef) else node.ref
                is_knot = isinstance(node, DurRef) or node.is_knot
                if is_knot and ref not in actor.knots:
                    raise DslParseError(
                        f"actor {node.actor} has no knot {ref!r}", c.line
                    )
                if not is_knot and ref not in actor.piece_bases:
                    raise DslParseError(
                        f"actor {node.actor} has no piece {ref!r}", c.line
                    )


def _collect_parameters(constraints: Sequence[ConstraintAst]) -> tuple[Param, ...]:
    seen: dict[str, Param] = {}
    for c in constraints:
        for node in [*_walk(c.lhs), *_walk(c.rhs)]:
            if isinstance(node, Param) and node.name not in seen:
                seen[node.name] = node
    return tuple(seen.values())


# ---------------------------------------------------------------------------
# Pretty printer (round-trips through parse_scenario)


def pretty_print(program: ScenarioProgram) -> str:
    lines: list[str] = []
    for a in program.actors:
        lines.append(f"Actor {a.actor_id}:")
        lines.append(f"- {', '.join(a.route)}")
        lines.append(f"- [{', '.join(a.skeleton)}]")
    lines.append("")
    lines.append("Constraints:")
    for c in program.constraints:
        lines.append(f"{_fmt(c.lhs)} {c.relation} {_fmt(c.rhs)}")
    return "\n".join(lines) + "\n"


def _fmt(node: Node, parent_prec: int = 0) -> str:
    if isinstance(node, Num):
        v = node.value
        return str(v.numerator) if v.denominator == 1 else f"{float(v)}"
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Special):
        return node.name
    if isinstance(node, JustBefore):
        return f"just_before({node.inner.name})"
    if isinstance(node, StateRef):
        return f"A{node.actor}{node.kind}({node.ref})"
    if isinstance(node, DurRef):
        return f"A{node.actor}({node.knot})"
    if isinstance(node, Neg):
        inner = _fmt(node.arg, 3)
        return f"-{inner}"
    if isinstance(node, BinOp):
        prec = 1 if node.op in "+-" else 2
        s = f"{_fmt(node.lhs, prec)} {node.op} {_fmt(node.rhs, prec + 1)}"
        return f"({s})" if prec < parent_prec else s
    raise TypeError(f"unknown node {node!r}")


# ---------------------------------------------------------------------------
# Lowering


@dataclass(frozen=True)
class Atom:
    lhs: Expr
    op: str
    rhs: Expr


@dataclass(frozen=True)
class LoweredConstraint:
    atoms: tuple[Atom, ...]
    label: str
    line: int = 0
    reactive: bool = False
    initial: bool = False
    positional: bool = True

    def variables(self) -> tuple[str, ...]:
        seen: list[str] = []
        have: set[str] = set()
        for atom in self.atoms:
            for side in (atom.lhs, atom.rhs):
                for name in free_vars(side):
                    if name not in have:
                        have.add(name)
                        seen.append(name)
        return tuple(seen)


ConstraintSet = list[LoweredConstraint]


def _subject_actor(c: ConstraintAst) -> int | None:
    for node in _walk(c.lhs):
        if isinstance(node, (StateRef, DurRef)):
            return node.actor
    return None


def _landmark_value(name: str, path: RoutePath, line: int) -> Fraction:
    if name in ("turn", "conflict_point"):
        if "lane_turn" in path.landmarks:
            return Fraction(path.landmarks["lane_turn"])
        if name == "conflict_point":
            raise LoweringError(
                f"line {line}: conflict_point referenced but no conflict registered on path"
            )
        if "turn_start" in path.landmarks:
            return Fraction(path.landmarks["turn_start"])
        raise LoweringError(f"line {line}: path has neither a conflict point nor a turn")
    key = {"stop_line": "turn_start"}.get(name, name)
    if key not in path.landmarks:
        raise LoweringError(f"line {line}: path has no landmark {key!r} for {name!r}")
    return Fraction(path.landmarks[key])


def lower(
    program: ScenarioProgram,
    profiles: Mapping[int, MotionProfile],
    paths: Mapping[int, RoutePath],
    bindings: Mapping[str, Numeric],
) -> ConstraintSet:
    """Lower parsed constraints onto profile expressions and landmarks."""
    missing = [p.name for p in program.parameters if p.name not in bindings]
    if missing:
        raise LoweringError(f"unbound parameters: {missing}")
    out: ConstraintSet = []
    for c in program.constraints:
        subject = _subject_actor(c)
        refs = [n for n in [*_walk(c.lhs), *_walk(c.rhs)] if isinstance(n, (StateRef, DurRef))]
        state_refs = [n for n in refs if isinstance(n, StateRef)]
        initial = bool(state_refs) and all(
            n.is_knot and program.actor(n.actor).knots.index(n.ref) == 0 for n in state_refs
        )
        reactive = False
        for n in _walk(c.lhs):
            if isinstance(n, StateRef) and n.kind == "x" and n.is_knot:
                idx = program.actor(n.actor).knots.index(n.ref)
                if 0 < idx < len(program.actor(n.actor).knots) - 1:
                    reactive = True
        positional = any(
            isinstance(n, (Special, JustBefore)) or (isinstance(n, StateRef) and n.kind == "x")
            for n in [*_walk(c.lhs), *_walk(c.rhs)]
        )

        def lower_node(node: Node) -> Expr:
            if isinstance(node, Num):
                return Const(node.value)
            if isinstance(node, Param):
                return const(to_fraction(bindings[node.name]))
            if isinstance(node, (Special, JustBefore)):
                if subject is None:
                    raise LoweringError(
                        f"line {c.line}: cannot resolve landmark without an actor on the LHS"
                    )
                if subject not in paths:
                    raise LoweringError(f"line {c.line}: no path for actor {subject}")
                if isinstance(node, JustBefore):
                    return Const(_landmark_value(node.inner.name, paths[subject], c.line) - 5)
                return Const(_landmark_value(node.name, paths[subject], c.line))
            if isinstance(node, StateRef):
                profile = profiles[node.actor]
                order = KIND_ORDERS[node.kind]
                if node.is_knot:
                    return state_at_knot(profile, node.ref, order)
                return profile.piece_by_base(node.ref).rates[order]
            if isinstance(node, DurRef):
                return duration_to_knot(profiles[node.actor], node.knot)
            if isinstance(node, Neg):
                return mul(const(-1), lower_node(node.arg))
            if isinstance(node, BinOp):
                l, r = lower_node(node.lhs), lower_node(node.rhs)
                if node.op == "+":
                    return add(l, r)
                if node.op == "-":
                    return add(l, mul(const(-1), r))
                return mul(l, r)
            raise LoweringError(f"line {c.line}: cannot lower {node!r}")

        out.append(
            LoweredConstraint(
                atoms=(Atom(lower_node(c.lhs), c.relation, lower_node(c.rhs)),),
                label=c.text,
                line=c.line,
                reactive=reactive,
                initial=initial,
                positional=positional,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Boilerplate constraints


@dataclass(frozen=True)
class BoilerplateConfig:
    v_max: float = 20.0
    a_min: float = -6.0
    a_max: float = 4.0
    horizon: float = 30.0


def boilerplate(
    profiles: Mapping[int, MotionProfile],
    paths: Mapping[int, RoutePath],
    config: BoilerplateConfig = BoilerplateConfig(),
) -> ConstraintSet:
    """Kinematic bounds, scenario length and path bounds for every actor.

    Per piece: one velocity bound at the piece's end knot, one bound on the
    piece's acceleration entry, one duration nonnegativity; per actor: one
    horizon bound on the duration sum and one initial-position bound. A
    t0 velocity bound is added only when the first piece carries a free
    initial-velocity rate (ACCELERATION order).
    """
    out: ConstraintSet = []
    v_max = const(config.v_max)
    a_min = const(config.a_min)
    a_max = const(config.a_max)
    zero = const(0)
    for actor_id in sorted(profiles):
        profile = profiles[actor_id]
        tag = f"A{actor_id}"
        for idx, piece in enumerate(profile.pieces):
            end_knot = profile.knots[idx + 1]
            v_end = state_at_knot(profile, end_knot, Order.VELOCITY)
            out.append(
                LoweredConstraint(
                    (Atom(v_end, ">=", zero), Atom(v_end, "<=", v_max)),
                    f"{tag} velocity bound at {end_knot}",
                    positional=False,
                )
            )
            acc = piece.rates[Order.ACCELERATION]
            out.append(
                LoweredConstraint(
                    (Atom(acc, ">=", a_min), Atom(acc, "<=", a_max)),
                    f"{tag} acceleration bound for {piece.name}",
                    positional=False,
                )
            )
            out.append(
                LoweredConstraint(
                    (Atom(piece.duration, ">=", zero),),
                    f"{tag} duration bound for {piece.name}",
                    positional=False,
                )
            )
        if profile.pieces and profile.pieces[0].order == Order.ACCELERATION:
            v0 = state_at_knot(profile, profile.knots[0], Order.VELOCITY)
            out.append(
                LoweredConstraint(
                    (Atom(v0, ">=", zero), Atom(v0, "<=", v_max)),
                    f"{tag} initial velocity bound",
                    positional=False,
                )
            )
        total = duration_to_knot(profile, profile.knots[-1])
        out.append(
            LoweredConstraint(
                (Atom(total, "<=", const(config.horizon)),),
                f"{tag} horizon bound",
                positional=False,
            )
        )
        if actor_id in paths:
            length = const(paths[actor_id].total_length)
            out.append(
                LoweredConstraint(
                    (
                        Atom(profile.initial_position, ">=", zero),
                        Atom(profile.initial_position, "<=", length),
                    ),
                    f"{tag} initial position within path",
                )
            )
    return out
