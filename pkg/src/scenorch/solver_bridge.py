"""SMT solver bridge: encoding, subprocess transport, tolerance ladder.

Constraint sets are rendered to deterministic SMT-LIB 2 text (logic
QF_NRA) and solved by an external process; the default transport is the
bundled Node shim running the genuine Z3 WASM build, kept warm in a
framed server mode. Any solver binary that reads SMT-LIB 2 on stdin can
replace it (`z3 -in -smt2` works as-is) via configuration or the
SCENORCH_SOLVER environment variable.

Every sat model is re-evaluated exactly (Fraction arithmetic) against the
encoded assertions before it is returned; solver output is never trusted
structurally.
"""

from __future__ import annotations

import math
import os
import select
import shlex
import shutil
import subprocess
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .constraint_dsl import Atom, ConstraintSet, LoweredConstraint
from .errors import (
    EncodingError,
    LadderExhaustedError,
    SolverTransportError,
    UnsoundModelError,
)
from .motion_profile import MotionProfile
from .symbolic import BoolExpr, Cmp, add, cmp, const, free_vars, holds, mul, to_smt

DEFAULT_LADDER = (0.0, 0.25, 0.5, 1.0, 2.0, 5.0)
DEFAULT_TIMEOUT = 10.0
# slack on velocity/acceleration/duration equalities, as a fraction of the
# distance tolerance (slack interpreted in natural units)
RATE_TOLERANCE_SCALE = 0.1


@dataclass(frozen=True)
class SolveRequest:
    variables: tuple[str, ...]
    assertions: tuple[tuple[BoolExpr, str], ...]
    timeout: float = DEFAULT_TIMEOUT
    tolerance: float = 0.0

    def __post_init__(self):
        declared = set(self.variables)
        for formula, label in self.assertions:
            undeclared = [v for v in free_vars(formula) if v not in declared]
            if undeclared:
                raise EncodingError(
                    f"assertion {label!r} references undeclared symbols {undeclared}"
                )


@dataclass(frozen=True)
class SolveOutcome:
    status: str  # sat | unsat | timeout
    model: dict[str, Fraction] | None
    wall_time: float
    tolerance: float
    stats: dict = field(default_factory=dict)

    @property
    def is_sat(self) -> bool:
        return self.status == "sat"


def collect_variables(profiles: Mapping[int, MotionProfile]) -> tuple[str, ...]:
    out: list[str] = []
    for actor_id in sorted(profiles):
        out.extend(profiles[actor_id].variables())
    return tuple(out)


def encode(
    constraints: ConstraintSet,
    profiles: Mapping[int, MotionProfile],
    tolerance: float = 0.0,
    timeout: float = DEFAULT_TIMEOUT,
) -> SolveRequest:
    """Deterministic encoding; equalities widen to |lhs - rhs| <= tolerance.

    Position-valued equalities get the full tolerance, other equalities
    one tenth of it; inequalities pass through unchanged.
    """
    assertions: list[tuple[BoolExpr, str]] = []
    for c in constraints:
        for k, atom in enumerate(c.atoms):
            label = c.label if len(c.atoms) == 1 else f"{c.label} [{k}]"
            if atom.op == "==" and tolerance > 0:
                tol = tolerance if c.positional else tolerance * RATE_TOLERANCE_SCALE
                diff = add(atom.lhs, mul(const(-1), atom.rhs))
                assertions.append((cmp("<=", diff, const(tol)), f"{label} (+tol)"))
                assertions.append(
                    (cmp("<=", mul(const(-1), diff), const(tol)), f"{label} (-tol)")
                )
            else:
                assertions.append((cmp(atom.op, atom.lhs, atom.rhs), label))
    return SolveRequest(
        variables=collect_variables(profiles),
        assertions=tuple(assertions),
        timeout=timeout,
        tolerance=tolerance,
    )


def to_smtlib(request: SolveRequest) -> str:
    lines = [
        "(set-option :print-success false)",
        f"(set-option :timeout {int(request.timeout * 1000)})",
        "(set-logic QF_NRA)",
    ]
    for name in request.variables:
        lines.append(f"(declare-const {name} Real)")
    for formula, label in request.assertions:
        lines.append(f"; {label}")
        lines.append(f"(assert {to_smt(formula)})")
    lines.append("(check-sat)")
    lines.append("(get-model)")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Transports


class SolverBackend(Protocol):
    def run(self, script: str, timeout: float) -> str: ...


class SolverTimeout(Exception):
    pass


class SubprocessSolver:
    """One process per request; the command must read SMT-LIB 2 on stdin."""

    def __init__(self, command: Sequence[str]):
        self.command = list(command)

    def run(self, script: str, timeout: float) -> str:
        try:
            proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
            )
        except OSError as e:
            raise SolverTransportError(f"cannot start solver {self.command}: {e}") from None
        try:
            out, err = proc.communicate(script.encode(), timeout=timeout + 5.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.communicate()
            raise SolverTimeout()
        if not out.strip():
            raise SolverTransportError(
                f"solver produced no output (stderr: {err.decode(errors='replace')[:500]})"
            )
        return out.decode()


class PersistentShimSolver:
    """Keeps the Node/Z3 shim warm; each job still gets a fresh context."""

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        self._proc: subprocess.Popen | None = None
        self._job = 0

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    stderr=subprocess.DEVNULL,
                )
            except OSError as e:
                raise SolverTransportError(f"cannot start solver {self.command}: {e}") from None
        return self._proc

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()
        self._proc = None

    def run(self, script: str, timeout: float) -> str:
        proc = self._ensure()
        self._job += 1
        job_id = str(self._job)
        payload = script.encode()
        try:
            proc.stdin.write(f"JOB {job_id} {len(payload)}\n".encode())
            proc.stdin.write(payload)
            proc.stdin.flush()
        except (BrokenPipeError, OSError):
            self.close()
            raise SolverTransportError("solver shim pipe broke while writing")
        deadline = time.monotonic() + timeout + 5.0
        buf = b""
        fd = proc.stdout.fileno()
        header = None
        body_len = 0
        while True:
            if header is None:
                nl = buf.find(b"\n")
                if nl >= 0:
                    head = buf[:nl].decode(errors="replace").strip()
                    buf = buf[nl + 1:]
                    parts = head.split()
                    if len(parts) != 3 or parts[0] != "RES":
                        self.close()
                        raise SolverTransportError(f"bad shim frame: {head!r}")
                    header = parts[1]
                    body_len = int(parts[2])
                    continue
            else:
                if len(buf) >= body_len:
                    out = buf[:body_len].decode()
                    if header != job_id:
                        self.close()
                        raise SolverTransportError("shim answered with a stale job id")
                    return out
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self.close()
                raise SolverTimeout()
            ready, _, _ = select.select([fd], [], [], min(remaining, 0.25))
            if ready:
                chunk = os.read(fd, 65536)
                if not chunk:
                    self.close()
                    raise SolverTransportError("solver shim exited mid-response")
                buf += chunk


def bundled_shim_command(server: bool = True) -> list[str] | None:
    shim = Path(__file__).parent / "solver_shim" / "z3smt2.mjs"
    node = shutil.which("node")
    if node is None or not shim.exists():
        return None
    if not (shim.parent / "node_modules" / "z3-solver").exists():
        return None
    cmd = [node, str(shim)]
    if server:
        cmd.append("--server")
    return cmd


def resolve_backend(command: str | None = None) -> SolverBackend:
    """Pick a transport: explicit command > $SCENORCH_SOLVER > z3 > shim."""
    spec = command or os.environ.get("SCENORCH_SOLVER")
    if spec:
        return SubprocessSolver(shlex.split(spec))
    z3 = shutil.which("z3")
    if z3:
        return SubprocessSolver([z3, "-in", "-smt2"])
    shim = bundled_shim_command(server=True)
    if shim:
        return PersistentShimSolver(shim)
    raise SolverTransportError(
        "no SMT solver available: set SCENORCH_SOLVER, install z3, or run "
        "`npm install` in scenorch/solver_shim"
    )


# ---------------------------------------------------------------------------
# Model parsing


def _sexp_tokens(text: str):
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in "()":
            yield ch
            i += 1
        elif ch.isspace():
            i += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        else:
            j = i
            while j < n and text[j] not in "() \t\r\n;":
                j += 1
            yield text[i:j]
            i = j


def _parse_sexps(text: str):
    stack: list[list] = [[]]
    for tok in _sexp_tokens(text):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            done = stack.pop()
            if not stack:
                raise SolverTransportError("unbalanced model s-expression")
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    return stack[0]


def _eval_value(sexp) -> Fraction:
    if isinstance(sexp, str):
        return Fraction(sexp.rstrip("?")) if "/" not in sexp else Fraction(sexp)
    head = sexp[0]
    if head == "-" and len(sexp) == 2:
        return -_eval_value(sexp[1])
    if head == "-" and len(sexp) == 3:
        return _eval_value(sexp[1]) - _eval_value(sexp[2])
    if head == "+":
        return sum((_eval_value(a) for a in sexp[1:]), Fraction(0))
    if head == "*":
        out = Fraction(1)
        for a in sexp[1:]:
            out *= _eval_value(a)
        return out
    if head == "/":
        return _eval_value(sexp[1]) / _eval_value(sexp[2])
    if head == "root-obj":
        return _eval_root_obj(sexp)
    raise SolverTransportError(f"cannot evaluate model value {sexp!r}")


def _poly_coeffs(sexp, var: str = "x") -> list[Fraction]:
    """Coefficients (ascending) of a univariate polynomial s-expression."""

    def combine_add(a, b):
        out = [Fraction(0)] * max(len(a), len(b))
        for i, v in enumerate(a):
            out[i] += v
        for i, v in enumerate(b):
            out[i] += v
        return out

    def combine_mul(a, b):
        out = [Fraction(0)] * (len(a) + len(b) - 1)
        for i, va in enumerate(a):
            for j, vb in enumerate(b):
                out[i + j] += va * vb
        return out

    def walk(node):
        if isinstance(node, str):
            if node == var:
                return [Fraction(0), Fraction(1)]
            return [Fraction(node)]
        head = node[0]
        if head == "+":
            out = [Fraction(0)]
            for a in node[1:]:
                out = combine_add(out, walk(a))
            return out
        if head == "-" and len(node) == 2:
            return [-c for c in walk(node[1])]
        if head == "-":
            out = walk(node[1])
            for a in node[2:]:
                out = combine_add(out, [-c for c in walk(a)])
            return out
        if head == "*":
            out = [Fraction(1)]
            for a in node[1:]:
                out = combine_mul(out, walk(a))
            return out
        if head == "^":
            base = walk(node[1])
            out = [Fraction(1)]
            for _ in range(int(node[2])):
                out = combine_mul(out, base)
            return out
        raise SolverTransportError(f"cannot read root-obj polynomial {node!r}")

    return walk(sexp)


def _eval_root_obj(sexp) -> Fraction:
    """Approximate the k-th real root of the polynomial to ~1e-30.

    Exactness is unavailable for algebraic irrationals; the bisection uses
    exact Fraction sign tests so the returned value brackets the true root
    within 2^-100, far below every tolerance in the engine.
    """
    coeffs = _poly_coeffs(sexp[1])
    index = int(sexp[2])  # 1-based, roots ordered ascending

    def p(v: Fraction) -> Fraction:
        out = Fraction(0)
        for c in reversed(coeffs):
            out = out * v + c
        return out

    # Cauchy bound for all real roots
    lead = coeffs[-1]
    bound = Fraction(1) + max(abs(c / lead) for c in coeffs[:-1]) if len(coeffs) > 1 else Fraction(1)
    # locate sign changes on a fine grid, then bisect
    steps = 4096
    lo = -bound
    width = (2 * bound) / steps
    brackets = []
    prev = p(lo)
    for i in range(1, steps + 1):
        v = lo + i * width
        cur = p(v)
        if cur == 0:
            brackets.append((v, v))
            prev = cur
            continue
        if prev == 0:
            prev = cur
            continue
        if (prev < 0) != (cur < 0):
            brackets.append((v - width, v))
        prev = cur
    if index > len(brackets):
        raise SolverTransportError(f"root-obj index {index} beyond {len(brackets)} roots")
    a, b = brackets[index - 1]
    for _ in range(100):
        mid = (a + b) / 2
        if p(a) * p(mid) <= 0:
            b = mid
        else:
            a = mid
    return (a + b) / 2


def parse_model(output: str, variables: Sequence[str]) -> dict[str, Fraction]:
    sexps = _parse_sexps(output)
    values: dict[str, Fraction] = {}
    def scan(node):
        if isinstance(node, list):
            if len(node) >= 5 and node[0] == "define-fun" and node[2] == [] and node[3] == "Real":
                values[node[1]] = _eval_value(node[4])
            else:
                for sub in node:
                    scan(sub)
    for s in sexps:
        scan(s)
    # unconstrained variables may be omitted; zero is re-checked downstream
    return {name: values.get(name, Fraction(0)) for name in variables}


# ---------------------------------------------------------------------------
# Solving


def solve(request: SolveRequest, backend: SolverBackend) -> SolveOutcome:
    """Run one request; sat models are exactly re-checked before return."""
    script = to_smtlib(request)
    start = time.monotonic()
    try:
        output = backend.run(script, request.timeout)
    except SolverTimeout:
        return SolveOutcome(
            "timeout", None, time.monotonic() - start, request.tolerance,
            {"n_assertions": len(request.assertions)},
        )
    wall = time.monotonic() - start
    status = output.strip().splitlines()[0].strip() if output.strip() else ""
    stats = {"n_assertions": len(request.assertions), "n_variables": len(request.variables)}
    if status == "unsat":
        return SolveOutcome("unsat", None, wall, request.tolerance, stats)
    if status in ("unknown", "timeout"):
        return SolveOutcome("timeout", None, wall, request.tolerance, stats)
    if status != "sat":
        raise SolverTransportError(f"unexpected solver output: {output[:300]!r}")
    model = parse_model(output, request.variables)
    for formula, label in request.assertions:
        if not holds(formula, model):
            raise UnsoundModelError(
                f"model violates {label!r} under exact re-evaluation"
            )
    return SolveOutcome("sat", model, wall, request.tolerance, stats)


def solve_with_ladder(
    constraints: ConstraintSet,
    profiles: Mapping[int, MotionProfile],
    backend: SolverBackend,
    ladder: Sequence[float] = DEFAULT_LADDER,
    per_step_timeout: float = DEFAULT_TIMEOUT,
) -> SolveOutcome:
    """Try ascending tolerances until sat; raise LadderExhaustedError otherwise."""
    if not ladder:
        raise ValueError("tolerance ladder must be non-empty")
    if list(ladder) != sorted(ladder):
        raise ValueError(f"tolerance ladder must ascend: {ladder}")
    attempts: list[SolveOutcome] = []
    for tol in ladder:
        request = encode(constraints, profiles, tolerance=tol, timeout=per_step_timeout)
        outcome = solve(request, backend)
        attempts.append(outcome)
        if outcome.is_sat:
            stats = dict(outcome.stats)
            stats["ladder_attempts"] = [(a.tolerance, a.status) for a in attempts]
            return SolveOutcome(
                outcome.status, outcome.model, sum(a.wall_time for a in attempts),
                outcome.tolerance, stats,
            )
    raise LadderExhaustedError(float(ladder[-1]), attempts)


def model_floats(model: Mapping[str, Fraction]) -> dict[str, float]:
    return {k: float(v) for k, v in model.items()}
