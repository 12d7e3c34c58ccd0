"""Lane-graph map, route resolution, Frenet transform, conflict points.

The map is a graph of lane segments with successor/predecessor/neighbor
edges. A route (list of cardinal directions) resolves to a RoutePath: the
traversed segments' centerlines fitted with a natural cubic spline and
reparameterized to arclength, plus named landmarks (lane_start,
turn_start, turn_end, stop_line, and lane_turn once a conflict point is
registered). All solver reasoning happens in the 1-D arclength frame this
module provides.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    AmbiguousRouteError,
    MapError,
    MapParseError,
    NoConflictError,
    ProjectionError,
    RouteError,
)

SEGMENT_KINDS = ("road", "driveway", "driveway_exit", "turn_left", "turn_right")
TURN_KINDS = ("turn_left", "turn_right")
HEADINGS = ("N", "E", "S", "W")
EDGE_RELATIONS = ("successor", "predecessor", "left_neighbor", "right_neighbor")


@dataclass(frozen=True)
class LaneSegment:
    id: str
    kind: str
    heading: str
    centerline: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise MapError(f"segment {self.id}: unknown kind {self.kind!r}")
        if self.heading not in HEADINGS:
            raise MapError(f"segment {self.id}: unknown heading {self.heading!r}")
        if len(self.centerline) < 2:
            raise MapError(f"segment {self.id}: centerline needs >= 2 points")
        for a, b in zip(self.centerline, self.centerline[1:]):
            if a == b:
                raise MapError(f"segment {self.id}: repeated centerline point {a}")

    @property
    def length(self) -> float:
        pts = np.asarray(self.centerline)
        return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


@dataclass(frozen=True)
class LaneGraph:
    segments: dict[str, LaneSegment]
    edges: tuple[tuple[str, str, str], ...]

    def __post_init__(self):
        for frm, to, rel in self.edges:
            if rel not in EDGE_RELATIONS:
                raise MapError(f"edge {frm}->{to}: unknown relation {rel!r}")
            for end in (frm, to):
                if end not in self.segments:
                    raise MapError(f"edge {frm}->{to}: unknown segment {end!r}")
        succ = {(f, t) for f, t, r in self.edges if r == "successor"}
        pred = {(f, t) for f, t, r in self.edges if r == "predecessor"}
        if {(t, f) for f, t in succ} != pred:
            raise MapError("successor/predecessor edges are not mutually inverse")

    def successors(self, seg_id: str) -> list[str]:
        return [t for f, t, r in self.edges if r == "successor" and f == seg_id]

    def predecessors(self, seg_id: str) -> list[str]:
        return [t for f, t, r in self.edges if r == "predecessor" and f == seg_id]


def build_t_intersection(
    lane_width: float = 3.5,
    road_length: float = 400.0,
    driveway_length: float = 60.0,
) -> LaneGraph:
    """Synthetic benchmark map: two-way East-West road, driveway to the North.

    The driveway exit lane heads South to a stop line at the mouth; four
    turn segments connect it to both road directions and the road to the
    driveway entrance. Right turns use radius lane_width/2, left turns
    3*lane_width/2, so every turn endpoint lands exactly on a lane
    centerline at the road split points x = +-lane_width.
    """
    if lane_width <= 0 or road_length <= 0 or driveway_length <= 0:
        raise MapError("all t-intersection dimensions must be positive")
    h = lane_width / 2.0
    half = road_length / 2.0
    if half <= 2 * h:
        raise MapError("road_length too short for the junction")
    top = 2 * h + driveway_length

    def straight(x0, y0, x1, y1, step=2.0):
        n = max(2, int(math.ceil(math.hypot(x1 - x0, y1 - y0) / step)) + 1)
        xs = np.linspace(x0, x1, n)
        ys = np.linspace(y0, y1, n)
        return tuple((float(x), float(y)) for x, y in zip(xs, ys))

    def arc(cx, cy, r, phi0, phi1):
        n = max(9, int(math.ceil(abs(phi1 - phi0) * r / 0.25)) + 1)
        phis = np.linspace(phi0, phi1, n)
        return tuple(
            (float(cx + r * math.cos(p)), float(cy + r * math.sin(p))) for p in phis
        )

    segs = [
        LaneSegment("W1", "road", "W", straight(half, h, 2 * h, h)),
        LaneSegment("W2", "road", "W", straight(2 * h, h, -2 * h, h, step=1.0)),
        LaneSegment("W3", "road", "W", straight(-2 * h, h, -half, h)),
        LaneSegment("E1", "road", "E", straight(-half, -h, -2 * h, -h)),
        LaneSegment("E2", "road", "E", straight(-2 * h, -h, 2 * h, -h, step=1.0)),
        LaneSegment("E3", "road", "E", straight(2 * h, -h, half, -h)),
        LaneSegment("drive_exit", "driveway_exit", "S", straight(-h, top, -h, 2 * h)),
        LaneSegment("drive_in", "driveway", "N", straight(h, 2 * h, h, top)),
        # S -> W right turn: center (-2h, 2h), radius h, from phi=0 to -pi/2
        LaneSegment("turn_SW", "turn_right", "W", arc(-2 * h, 2 * h, h, 0.0, -math.pi / 2)),
        # S -> E left turn: center (2h, 2h), radius 3h, from pi to 3pi/2
        LaneSegment("turn_SE", "turn_left", "E", arc(2 * h, 2 * h, 3 * h, math.pi, 1.5 * math.pi)),
        # W -> N right turn: center (2h, 2h), radius h, from -pi/2 to -pi
        LaneSegment("turn_WN", "turn_right", "N", arc(2 * h, 2 * h, h, -math.pi / 2, -math.pi)),
        # E -> N left turn: center (-2h, 2h), radius 3h, from -pi/2 to 0
        LaneSegment("turn_EN", "turn_left", "N", arc(-2 * h, 2 * h, 3 * h, -math.pi / 2, 0.0)),
    ]
    succ_pairs = [
        ("W1", "W2"), ("W2", "W3"),
        ("E1", "E2"), ("E2", "E3"),
        ("drive_exit", "turn_SW"), ("turn_SW", "W3"),
        ("drive_exit", "turn_SE"), ("turn_SE", "E3"),
        ("W1", "turn_WN"), ("turn_WN", "drive_in"),
        ("E1", "turn_EN"), ("turn_EN", "drive_in"),
    ]
    neighbor_pairs = [("W1", "E3"), ("W2", "E2"), ("W3", "E1"), ("drive_exit", "drive_in")]
    edges: list[tuple[str, str, str]] = []
    for a, b in succ_pairs:
        edges.append((a, b, "successor"))
        edges.append((b, a, "predecessor"))
    for a, b in neighbor_pairs:
        edges.append((a, b, "left_neighbor"))
        edges.append((b, a, "left_neighbor"))
    return LaneGraph({s.id: s for s in segs}, tuple(edges))


def serialize_lane_graph(graph: LaneGraph) -> str:
    doc = {
        "version": 1,
        "segments": [
            {
                "id": s.id,
                "kind": s.kind,
                "heading": s.heading,
                "centerline": [[x, y] for x, y in s.centerline],
            }
            for s in sorted(graph.segments.values(), key=lambda s: s.id)
        ],
        "edges": [
            {"from": f, "to": t, "relation": r} for f, t, r in sorted(graph.edges)
        ],
    }
    return json.dumps(doc, indent=1)


def load_lane_graph(text: str) -> LaneGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MapParseError(f"not valid JSON: {e}") from None
    if not isinstance(doc, dict) or "segments" not in doc or "edges" not in doc:
        raise MapParseError("map document needs top-level 'segments' and 'edges'")
    segments = {}
    for raw in doc["segments"]:
        for key in ("id", "kind", "heading", "centerline"):
            if key not in raw:
                raise MapParseError(f"segment {raw.get('id', '?')}: missing {key!r}")
        try:
            seg = LaneSegment(
                raw["id"],
                raw["kind"],
                raw["heading"],
                tuple((float(x), float(y)) for x, y in raw["centerline"]),
            )
        except (TypeError, ValueError) as e:
            raise MapParseError(f"segment {raw['id']}: bad centerline ({e})") from None
        segments[seg.id] = seg
    edges = []
    for raw in doc["edges"]:
        for key in ("from", "to", "relation"):
            if key not in raw:
                raise MapParseError(f"edge {raw}: missing {key!r}")
        edges.append((raw["from"], raw["to"], raw["relation"]))
    return LaneGraph(segments, tuple(edges))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


class ArcLengthSpline:
    """Natural cubic spline through waypoints, queried by arclength.

    The spline is fitted over cumulative chord length; arclength per span
    comes from 10-point Gauss-Legendre quadrature of |r'(u)|, and queries
    invert the strictly increasing arclength map with Newton iterations.
    """

    def __init__(self, points: Sequence[tuple[float, float]]):
        pts = [points[0]]
        for p in points[1:]:
            if math.hypot(p[0] - pts[-1][0], p[1] - pts[-1][1]) > 1e-9:
                pts.append(p)
        arr = np.asarray(pts, dtype=float)
        if len(arr) < 2:
            raise MapError("spline needs at least two distinct points")
        chord = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(arr, axis=0).T))])
        self._cs = CubicSpline(chord, arr, bc_type="natural", axis=0)
        self._du = self._cs.derivative()
        self._u_knots = chord
        # cumulative arclength at every chord knot
        s = [0.0]
        for a, b in zip(chord[:-1], chord[1:]):
            s.append(s[-1] + self._quad_speed(a, b))
        self._s_knots = np.asarray(s)
        self.total_length = float(self._s_knots[-1])
        # fine (arclength -> chord parameter) table: 8 trapezoid subintervals
        # per span, used to seed Newton and for coarse batch sampling
        subs = np.linspace(0.0, 1.0, 9)
        u_fine = (chord[:-1, None] + np.diff(chord)[:, None] * subs[None, :]).ravel()
        u_fine = np.unique(u_fine)
        d = self._du(u_fine)
        speed = np.hypot(d[:, 0], d[:, 1])
        seg = 0.5 * (speed[:-1] + speed[1:]) * np.diff(u_fine)
        s_fine = np.concatenate([[0.0], np.cumsum(seg)])
        # rescale the trapezoid estimate so span boundaries match quadrature
        self._u_fine = u_fine
        self._s_fine = s_fine * (self.total_length / s_fine[-1] if s_fine[-1] > 0 else 1.0)
        # dense arclength grid for projection seeding
        n = max(8, int(math.ceil(self.total_length / 0.25)) + 1)
        self._grid_s = np.linspace(0.0, self.total_length, n)
        self._grid_xy = self.points_coarse(self._grid_s)

    def _quad_speed(self, a: float, b: float) -> float:
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        us = mid + half * _GL_NODES
        d = self._du(us)
        return float(half * np.sum(_GL_WEIGHTS * np.hypot(d[:, 0], d[:, 1])))

    def _u_of_s(self, s: float) -> float:
        s = min(max(s, 0.0), self.total_length)
        idx = int(np.searchsorted(self._s_knots, s, side="right")) - 1
        idx = min(max(idx, 0), len(self._u_knots) - 2)
        u = self._u_knots[idx]
        target = s - self._s_knots[idx]
        # Newton on F(u) = arclength(u_idx, u) - target
        for _ in range(30):
            f = self._quad_speed(self._u_knots[idx], u) - target
            speed = float(np.hypot(*self._du(u)))
            step = f / max(speed, 1e-12)
            u -= step
            u = min(max(u, self._u_knots[idx]), self._u_knots[idx + 1])
            if abs(step) < 1e-12:
                break
        return float(u)

    def point(self, s: float) -> tuple[float, float]:
        x, y = self._cs(self._u_of_s(s))
        return float(x), float(y)

    def points_coarse(self, s_values: np.ndarray) -> np.ndarray:
        """Vectorized batch evaluation via the fine table (~1e-4 m accurate)."""
        u = np.interp(np.clip(s_values, 0.0, self.total_length), self._s_fine, self._u_fine)
        return np.asarray(self._cs(u), dtype=float)

    def tangent(self, s: float) -> tuple[float, float]:
        dx, dy = self._du(self._u_of_s(s))
        norm = math.hypot(dx, dy)
        return float(dx / norm), float(dy / norm)

    def heading(self, s: float) -> float:
        tx, ty = self.tangent(s)
        return math.atan2(ty, tx)

    def project(self, x: float, y: float) -> tuple[float, float, bool]:
        """(arclength, distance, ambiguous) of the closest spline point."""
        q = np.array([x, y])
        a = self._grid_xy[:-1]
        b = self._grid_xy[1:]
        ab = b - a
        denom = np.maximum(np.sum(ab * ab, axis=1), 1e-18)
        t = np.clip(np.sum((q - a) * ab, axis=1) / denom, 0.0, 1.0)
        closest = a + t[:, None] * ab
        dist = np.hypot(*(closest - q).T)
        best = int(np.argmin(dist))
        dmin = float(dist[best])
        # ambiguity: near-equal minima in disjoint arclength regions
        near = np.nonzero(dist <= dmin + 1e-7)[0]
        s_near = self._grid_s[near]
        ambiguous = bool(len(near) > 1 and (s_near.max() - s_near.min()) > 1.0)
        if ambiguous:
            best = int(near[np.argmin(s_near)])
        seg_len = self._grid_s[best + 1] - self._grid_s[best]
        s = float(self._grid_s[best] + t[best] * seg_len)
        s = self._refine_projection(q, s)
        px, py = self.point(s)
        return s, float(math.hypot(px - x, py - y)), ambiguous

    def _refine_projection(self, q: np.ndarray, s: float) -> float:
        for _ in range(20):
            u = self._u_of_s(s)
            p = np.asarray(self._cs(u), dtype=float)
            d1 = np.asarray(self._du(u), dtype=float)
            speed = math.hypot(*d1)
            tang = d1 / max(speed, 1e-12)
            g = float((p - q) @ tang)
            d2 = np.asarray(self._cs.derivative(2)(u), dtype=float) / max(speed**2, 1e-12)
            gp = 1.0 + float((p - q) @ d2)
            step = g / gp if abs(gp) > 1e-6 else g
            s_new = min(max(s - step, 0.0), self.total_length)
            if abs(s_new - s) < 1e-10:
                return s_new
            s = s_new
        return s


@dataclass
class RoutePath:
    """A resolved drivable path; immutable except for landmark registration."""

    segment_ids: tuple[str, ...]
    spline: ArcLengthSpline
    total_length: float
    landmarks: dict[str, float] = field(default_factory=dict)
    segment_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)

    def add_landmark(self, name: str, arclength: float) -> None:
        if not -1e-6 <= arclength <= self.total_length + 1e-6:
            raise MapError(
                f"landmark {name}={arclength:.3f} outside path [0, {self.total_length:.3f}]"
            )
        self.landmarks[name] = float(min(max(arclength, 0.0), self.total_length))

    def landmark(self, name: str) -> float:
        try:
            return self.landmarks[name]
        except KeyError:
            raise MapError(f"path has no landmark {name!r} (has {sorted(self.landmarks)})") from None


@dataclass(frozen=True)
class FrenetState:
    l: float
    l_dot: float
    l_ddot: float
    ambiguous: bool = False
    lateral: float = 0.0


@dataclass(frozen=True)
class CartesianState:
    x: float
    y: float
    theta: float
    v: float
    a: float
    clamped: bool = False


def _heads(graph: LaneGraph, tag: str) -> list[str]:
    out = []
    for seg in graph.segments.values():
        if seg.heading != tag or seg.kind in TURN_KINDS:
            continue
        preds = [
            p
            for p in graph.predecessors(seg.id)
            if graph.segments[p].heading == tag and graph.segments[p].kind not in TURN_KINDS
        ]
        if not preds:
            out.append(seg.id)
    return sorted(out)


def _walk_chain(graph: LaneGraph, start: str) -> list[str]:
    tag = graph.segments[start].heading
    chain = [start]
    while True:
        nxt = [
            s
            for s in graph.successors(chain[-1])
            if graph.segments[s].heading == tag and graph.segments[s].kind not in TURN_KINDS
        ]
        if not nxt:
            return chain
        if len(nxt) > 1:
            raise AmbiguousRouteError(f"segment {chain[-1]} has several {tag} successors: {nxt}")
        chain.append(nxt[0])


def resolve_route(graph: LaneGraph, directions: Sequence[str]) -> RoutePath:
    """Resolve a cardinal-direction sequence to a RoutePath.

    Turn segments are inserted automatically between unequal consecutive
    directions; the path carries lane_start, turn_start/turn_end and
    stop_line (= turn_start) landmarks when a turn exists.
    """
    if not directions:
        raise RouteError("directions must be non-empty")
    for d in directions:
        if d not in HEADINGS:
            raise RouteError(f"unknown direction {d!r}")
    heads = _heads(graph, directions[0])
    if not heads:
        raise RouteError(f"no lane heads in direction {directions[0]!r}")
    if len(heads) > 1:
        raise AmbiguousRouteError(f"multiple starting lanes for {directions[0]!r}: {heads}")
    chain = _walk_chain(graph, heads[0])
    path_ids: list[str] = []
    for next_dir in directions[1:]:
        options = []
        for idx, seg_id in enumerate(chain):
            for turn_id in graph.successors(seg_id):
                turn = graph.segments[turn_id]
                if turn.kind not in TURN_KINDS:
                    continue
                targets = [
                    t
                    for t in graph.successors(turn_id)
                    if graph.segments[t].heading == next_dir
                ]
                if targets:
                    options.append((idx, turn_id, targets[0]))
        if not options:
            raise RouteError(
                f"no turn from {directions} realises {next_dir!r} after {chain}"
            )
        if len(options) > 1:
            raise AmbiguousRouteError(f"several turns realise {next_dir!r}: {options}")
        idx, turn_id, target = options[0]
        path_ids.extend(chain[: idx + 1])
        path_ids.append(turn_id)
        chain = _walk_chain(graph, target)
    path_ids.extend(chain)

    points: list[tuple[float, float]] = []
    for seg_id in path_ids:
        for p in graph.segments[seg_id].centerline:
            if points and math.hypot(p[0] - points[-1][0], p[1] - points[-1][1]) < 1e-9:
                continue
            points.append(p)
    spline = ArcLengthSpline(points)
    path = RoutePath(tuple(path_ids), spline, spline.total_length)
    for seg_id in path_ids:
        seg = graph.segments[seg_id]
        entry, _, _ = spline.project(*seg.centerline[0])
        exit_, _, _ = spline.project(*seg.centerline[-1])
        path.segment_bounds[seg_id] = (entry, exit_)
    path.add_landmark("lane_start", 0.0)
    for seg_id in path_ids:
        seg = graph.segments[seg_id]
        if seg.kind in TURN_KINDS:
            entry, exit_ = path.segment_bounds[seg_id]
            path.add_landmark("turn_start", entry)
            path.add_landmark("turn_end", exit_)
            path.add_landmark("stop_line", entry)
            break
    return path


def to_frenet(path: RoutePath, x: float, y: float, theta: float, v: float, a: float) -> FrenetState:
    """Project a Cartesian state onto the path (longitudinal state only).

    Lateral deviation is measured then discarded; speed and acceleration
    map through cos(heading error) onto the tangent.
    """
    s, dist, ambiguous = path.spline.project(x, y)
    if dist > 5.0:
        raise ProjectionError(f"state ({x:.2f},{y:.2f}) is {dist:.2f} m off-path")
    align = math.cos(theta - path.spline.heading(s))
    # acceleration is the scalar longitudinal rate; it carries through
    # unchanged so the transform pair stays an exact inverse
    return FrenetState(s, v * align, a, ambiguous, dist)


def from_frenet(
    path: RoutePath, l: float, l_dot: float, l_ddot: float, strict: bool = False
) -> CartesianState:
    """Place a longitudinal state back on the path."""
    clamped = False
    if l < 0.0 or l > path.total_length:
        if strict:
            raise ProjectionError(f"arclength {l:.3f} outside [0, {path.total_length:.3f}]")
        l = min(max(l, 0.0), path.total_length)
        clamped = True
    theta = path.spline.heading(l)
    if l_dot < 0:
        theta = math.atan2(math.sin(theta + math.pi), math.cos(theta + math.pi))
    x, y = path.spline.point(l)
    return CartesianState(x, y, theta, abs(l_dot), l_ddot, clamped)


@dataclass(frozen=True)
class ConflictPoint:
    point: tuple[float, float]
    frac_a: float
    frac_b: float
    arclength_a: float
    arclength_b: float
    kind: str  # "crossing" | "merge" | "divergence"


def _shared_run(a_ids: Sequence[str], b_ids: Sequence[str]) -> list[str]:
    shared = [s for s in a_ids if s in b_ids]
    return shared


def _seg_intersection(p1, p2, p3, p4):
    """Intersection point of segments p1p2 and p3p4, or None."""
    d1 = (p2[0] - p1[0], p2[1] - p1[1])
    d2 = (p4[0] - p3[0], p4[1] - p3[1])
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(denom) < 1e-14:
        return None
    dx, dy = p3[0] - p1[0], p3[1] - p1[1]
    t = (dx * d2[1] - dy * d2[0]) / denom
    u = (dx * d1[1] - dy * d1[0]) / denom
    if -1e-12 <= t <= 1 + 1e-12 and -1e-12 <= u <= 1 + 1e-12:
        return (p1[0] + t * d1[0], p1[1] + t * d1[1], t, u)
    return None


def _sampled(path: RoutePath, step: float) -> tuple[np.ndarray, np.ndarray]:
    n = max(2, int(math.ceil(path.total_length / step)) + 1)
    s = np.linspace(0.0, path.total_length, n)
    return s, path.spline.points_coarse(s)


def conflict_point(path_a: RoutePath, path_b: RoutePath) -> ConflictPoint:
    """Locate where two paths cross or merge; registers lane_turn on both.

    Shared-suffix routes merge at the entry of their first shared segment;
    routes that overlap then diverge conflict at the divergence point;
    otherwise the first transversal crossing (by path_a arclength) of the
    sampled centerlines is refined and returned.
    """
    shared = _shared_run(path_a.segment_ids, path_b.segment_ids)
    if shared:
        if path_a.segment_ids[-1] == path_b.segment_ids[-1]:
            # merge: walk the common suffix back to its first segment
            i, j = len(path_a.segment_ids) - 1, len(path_b.segment_ids) - 1
            while i > 0 and j > 0 and path_a.segment_ids[i - 1] == path_b.segment_ids[j - 1]:
                i -= 1
                j -= 1
            first_shared = path_a.segment_ids[i]
            kind = "merge"
            anchor_end = False
        else:
            first_shared = shared[-1]
            kind = "divergence"
            anchor_end = True
        # entry (merge) or exit (divergence) arclength of the anchor segment
        sa = _segment_boundary_arclength(path_a, first_shared, anchor_end)
        sb = _segment_boundary_arclength(path_b, first_shared, anchor_end)
        pa = path_a.spline.point(sa)
        point = pa
    else:
        sa, sb, point = _first_crossing(path_a, path_b)
        kind = "crossing"
    path_a.add_landmark("lane_turn", sa)
    path_b.add_landmark("lane_turn", sb)
    return ConflictPoint(
        point=point,
        frac_a=sa / path_a.total_length,
        frac_b=sb / path_b.total_length,
        arclength_a=sa,
        arclength_b=sb,
        kind=kind,
    )


def _segment_boundary_arclength(path: RoutePath, seg_id: str, end: bool) -> float:
    try:
        entry, exit_ = path.segment_bounds[seg_id]
    except KeyError:
        raise MapError(
            f"path lacks segment bounds for {seg_id!r}; build paths via resolve_route"
        ) from None
    return exit_ if end else entry


def _first_crossing(path_a: RoutePath, path_b: RoutePath):
    step = 0.1
    sa, xa = _sampled(path_a, step)
    sb, xb = _sampled(path_b, step)
    r = xb[:-1]
    d2 = xb[1:] - xb[:-1]
    hits = []
    for i in range(len(xa) - 1):
        p = xa[i]
        d1 = xa[i + 1] - p
        rp = r - p
        den = d1[0] * d2[:, 1] - d1[1] * d2[:, 0]
        ok = np.abs(den) > 1e-14
        safe = np.where(ok, den, 1.0)
        t = (rp[:, 0] * d2[:, 1] - rp[:, 1] * d2[:, 0]) / safe
        u = (rp[:, 0] * d1[1] - rp[:, 1] * d1[0]) / safe
        idx = np.nonzero(ok & (t >= -1e-12) & (t <= 1 + 1e-12) & (u >= -1e-12) & (u <= 1 + 1e-12))[0]
        if len(idx):
            j = int(idx[0])
            hits.append(
                (
                    sa[i] + float(t[j]) * (sa[i + 1] - sa[i]),
                    sb[j] + float(u[j]) * (sb[j + 1] - sb[j]),
                )
            )
            break
    if not hits:
        raise NoConflictError(
            f"paths {path_a.segment_ids} and {path_b.segment_ids} do not intersect"
        )
    s_a0, s_b0 = hits[0]
    return _refine_crossing(path_a, path_b, s_a0, s_b0)


def _refine_crossing(path_a: RoutePath, path_b: RoutePath, sa0: float, sb0: float):
    """Bisection-style refinement around the coarse crossing to ~1e-4 m."""
    window = 0.2
    fine = 1e-3
    for _ in range(2):
        a_lo, a_hi = max(0.0, sa0 - window), min(path_a.total_length, sa0 + window)
        b_lo, b_hi = max(0.0, sb0 - window), min(path_b.total_length, sb0 + window)
        na = max(3, int((a_hi - a_lo) / fine) + 1)
        nb = max(3, int((b_hi - b_lo) / fine) + 1)
        svA = np.linspace(a_lo, a_hi, na)
        svB = np.linspace(b_lo, b_hi, nb)
        A = np.asarray([path_a.spline.point(v) for v in svA])
        B = np.asarray([path_b.spline.point(v) for v in svB])
        found = None
        for i in range(len(A) - 1):
            for j in range(len(B) - 1):
                hit = _seg_intersection(A[i], A[i + 1], B[j], B[j + 1])
                if hit is not None:
                    x, y, t, u = hit
                    found = (
                        svA[i] + t * (svA[i + 1] - svA[i]),
                        svB[j] + u * (svB[j + 1] - svB[j]),
                        (x, y),
                    )
                    break
            if found:
                break
        if found is None:
            break
        sa0, sb0, point = found
        window = fine * 2
        fine = fine / 20
    return sa0, sb0, (float(point[0]), float(point[1]))
