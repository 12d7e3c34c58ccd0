"""Tiny symbolic expression layer for real-valued constraint terms.

Expressions are immutable trees over rational constants, named real
variables, +, *, and if-then-else; relations and conjunctions live in a
parallel boolean tree. They evaluate exactly under Fraction environments
(the soundness re-check in solver_bridge depends on this) and print to
deterministic SMT-LIB 2 text.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Union

Numeric = Union[int, float, Fraction]


def to_fraction(value) -> Fraction:
    """Exact conversion; decimal strings parse exactly, floats bit-exactly."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, float, str)):
        return Fraction(value)
    raise TypeError(f"not a numeric constant: {value!r}")


class Expr:
    """Base class; construction helpers live at module level."""

    __slots__ = ()

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, mul(Const(Fraction(-1)), as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), mul(Const(Fraction(-1)), self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __neg__(self):
        return mul(Const(Fraction(-1)), self)


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: Fraction

    def __repr__(self):
        return f"Const({self.value})"


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str

    def __repr__(self):
        return f"Var({self.name})"


@dataclass(frozen=True, slots=True)
class Add(Expr):
    args: tuple[Expr, ...]


@dataclass(frozen=True, slots=True)
class Mul(Expr):
    args: tuple[Expr, ...]


@dataclass(frozen=True, slots=True)
class Ite(Expr):
    cond: "BoolExpr"
    then: Expr
    other: Expr


class BoolExpr:
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class Cmp(BoolExpr):
    op: str  # one of ==, <, <=, >, >=
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True, slots=True)
class And(BoolExpr):
    args: tuple[BoolExpr, ...]


ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))

_CMP_OPS = {"==", "<", "<=", ">", ">="}


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return Const(to_fraction(value))


def const(value: Numeric) -> Const:
    return Const(to_fraction(value))


def var(name: str) -> Var:
    return Var(name)


def add(*args) -> Expr:
    """n-ary sum with flattening and constant folding; preserves term order."""
    flat: list[Expr] = []
    acc = Fraction(0)
    for a in map(as_expr, args):
        if isinstance(a, Add):
            for sub in a.args:
                if isinstance(sub, Const):
                    acc += sub.value
                else:
                    flat.append(sub)
        elif isinstance(a, Const):
            acc += a.value
        else:
            flat.append(a)
    if acc != 0 or not flat:
        flat.append(Const(acc))
    if len(flat) == 1:
        return flat[0]
    return Add(tuple(flat))


def mul(*args) -> Expr:
    """n-ary product with flattening and constant folding."""
    flat: list[Expr] = []
    acc = Fraction(1)
    for a in map(as_expr, args):
        if isinstance(a, Mul):
            for sub in a.args:
                if isinstance(sub, Const):
                    acc *= sub.value
                else:
                    flat.append(sub)
        elif isinstance(a, Const):
            acc *= a.value
        else:
            flat.append(a)
    if acc == 0:
        return ZERO
    if acc != 1 or not flat:
        flat.insert(0, Const(acc))
    if len(flat) == 1:
        return flat[0]
    return Mul(tuple(flat))


def ite(cond: BoolExpr, then, other) -> Expr:
    return Ite(cond, as_expr(then), as_expr(other))


def cmp(op: str, lhs, rhs) -> Cmp:
    if op not in _CMP_OPS:
        raise ValueError(f"unknown relation {op!r}")
    return Cmp(op, as_expr(lhs), as_expr(rhs))


def conj(*args: BoolExpr) -> BoolExpr:
    flat: list[BoolExpr] = []
    for a in args:
        if isinstance(a, And):
            flat.extend(a.args)
        else:
            flat.append(a)
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def evaluate(expr: Expr, env: Mapping[str, Numeric]):
    """Evaluate under env. Fraction-valued env gives exact arithmetic."""
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        try:
            return env[expr.name]
        except KeyError:
            raise KeyError(f"unbound variable {expr.name}") from None
    if isinstance(expr, Add):
        total = None
        for a in expr.args:
            v = evaluate(a, env)
            total = v if total is None else total + v
        return total
    if isinstance(expr, Mul):
        total = None
        for a in expr.args:
            v = evaluate(a, env)
            total = v if total is None else total * v
        return total
    if isinstance(expr, Ite):
        return evaluate(expr.then if holds(expr.cond, env) else expr.other, env)
    raise TypeError(f"not an expression: {expr!r}")


def holds(cond: BoolExpr, env: Mapping[str, Numeric]) -> bool:
    if isinstance(cond, Cmp):
        a = evaluate(cond.lhs, env)
        b = evaluate(cond.rhs, env)
        if cond.op == "==":
            return a == b
        if cond.op == "<":
            return a < b
        if cond.op == "<=":
            return a <= b
        if cond.op == ">":
            return a > b
        if cond.op == ">=":
            return a >= b
    if isinstance(cond, And):
        return all(holds(a, env) for a in cond.args)
    raise TypeError(f"not a boolean expression: {cond!r}")


def free_vars(node) -> tuple[str, ...]:
    """Free variable names in first-appearance order (deterministic)."""
    out: list[str] = []
    seen: set[str] = set()

    def walk(n):
        if isinstance(n, Var):
            if n.name not in seen:
                seen.add(n.name)
                out.append(n.name)
        elif isinstance(n, (Add, Mul)):
            for a in n.args:
                walk(a)
        elif isinstance(n, Ite):
            walk(n.cond)
            walk(n.then)
            walk(n.other)
        elif isinstance(n, Cmp):
            walk(n.lhs)
            walk(n.rhs)
        elif isinstance(n, And):
            for a in n.args:
                walk(a)

    walk(node)
    return tuple(out)


def _smt_rational(value: Fraction) -> str:
    p, q = value.numerator, value.denominator
    if q == 1:
        body = f"{abs(p)}.0"
    else:
        body = f"(/ {abs(p)}.0 {q}.0)"
    return f"(- {body})" if p < 0 else body


def to_smt(node) -> str:
    """Deterministic SMT-LIB 2 rendering of an Expr or BoolExpr."""
    if isinstance(node, Const):
        return _smt_rational(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Add):
        return "(+ " + " ".join(to_smt(a) for a in node.args) + ")"
    if isinstance(node, Mul):
        return "(* " + " ".join(to_smt(a) for a in node.args) + ")"
    if isinstance(node, Ite):
        return f"(ite {to_smt(node.cond)} {to_smt(node.then)} {to_smt(node.other)})"
    if isinstance(node, Cmp):
        op = "=" if node.op == "==" else node.op
        return f"({op} {to_smt(node.lhs)} {to_smt(node.rhs)})"
    if isinstance(node, And):
        return "(and " + " ".join(to_smt(a) for a in node.args) + ")"
    raise TypeError(f"cannot render {node!r}")


def exact_env(assignment: Mapping[str, Numeric]) -> dict[str, Fraction]:
    return {k: to_fraction(v) for k, v in assignment.items()}


def float_env(assignment: Mapping[str, Numeric]) -> dict[str, float]:
    return {k: float(v) for k, v in assignment.items()}
