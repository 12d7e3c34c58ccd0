"""Scenario traces: per-tick world states plus JSONL persistence.

A trace document is newline-delimited JSON with a single header line
followed by frame records and per-replan solve records. Given the same
run configuration two runs serialize byte-identically, so wall-clock
solve times are kept out of the document (they live in the separate run
stats artifact).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

from .errors import TraceIOError

ENGINE_VERSION = "0.1.0"


@dataclass(frozen=True)
class ActorState:
    x: float
    y: float
    theta: float
    v: float
    a: float

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.theta, self.v, self.a]


@dataclass
class WorldState:
    time: float
    states: dict[int, ActorState]
    value: float = 0.0  # reactive buffer carried into rollout constraints


@dataclass
class Trace:
    dt: float
    frames: list[WorldState]
    metadata: dict = field(default_factory=dict)
    # run-local byproducts, deliberately not serialized: wall-clock solve
    # timings (nondeterministic) and the concrete profiles per solve epoch
    timings: list = field(default_factory=list, repr=False, compare=False)
    solutions: dict = field(default_factory=dict, repr=False, compare=False)

    def validate(self) -> None:
        for i, (a, b) in enumerate(zip(self.frames, self.frames[1:])):
            if abs((b.time - a.time) - self.dt) > 1e-9:
                raise TraceIOError(
                    f"frames {i},{i+1} are {b.time - a.time:.6f}s apart, expected {self.dt}"
                )

    def actor_ids(self) -> list[int]:
        return sorted(self.frames[0].states) if self.frames else []

    def series(self, actor_id: int, attr: str) -> list[float]:
        return [getattr(f.states[actor_id], attr) for f in self.frames]


def trace_to_lines(trace: Trace) -> list[str]:
    header = {
        "type": "header",
        "engine_version": ENGINE_VERSION,
        "dt": trace.dt,
        "n_frames": len(trace.frames),
        "metadata": trace.metadata,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for f in trace.frames:
        lines.append(
            json.dumps(
                {
                    "type": "frame",
                    "t": f.time,
                    "value": f.value,
                    "actors": {str(i): f.states[i].as_list() for i in sorted(f.states)},
                },
                sort_keys=True,
            )
        )
    return lines


def write_trace(trace: Trace, path) -> None:
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(trace_to_lines(trace)) + "\n")
    except OSError as e:
        raise TraceIOError(f"cannot write trace {path}: {e}") from None


def load_trace(path) -> Trace:
    try:
        with open(path) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as e:
        raise TraceIOError(f"cannot read trace {path}: {e}") from None
    if not lines:
        raise TraceIOError(f"trace {path} is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise TraceIOError(f"bad trace header: {e}") from None
    if header.get("type") != "header":
        raise TraceIOError("first trace line is not a header record")
    frames = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        if rec.get("type") != "frame":
            continue
        frames.append(
            WorldState(
                time=rec["t"],
                states={int(k): ActorState(*v) for k, v in rec["actors"].items()},
                value=rec.get("value", 0.0),
            )
        )
    return Trace(dt=header["dt"], frames=frames, metadata=header.get("metadata", {}))
