import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenorch.errors import (
    AmbiguousRouteError,
    MapError,
    MapParseError,
    NoConflictError,
    ProjectionError,
    RouteError,
)
from scenorch.lane_map import (
    ArcLengthSpline,
    LaneGraph,
    LaneSegment,
    build_t_intersection,
    conflict_point,
    from_frenet,
    load_lane_graph,
    resolve_route,
    serialize_lane_graph,
    to_frenet,
)

W = 3.5


# ---------------------------------------------------------------------------
# builder


def test_builder_segment_inventory(t_graph):
    headings = {s.heading for s in t_graph.segments.values()}
    assert headings == {"N", "E", "S", "W"}
    turns = [s for s in t_graph.segments.values() if s.kind.startswith("turn")]
    assert len(turns) == 4
    assert any(s.kind == "driveway_exit" and s.heading == "S" for s in t_graph.segments.values())
    assert any(s.kind == "driveway" and s.heading == "N" for s in t_graph.segments.values())


def test_builder_westbound_lane_offset(t_graph):
    for seg_id in ("W1", "W2", "W3"):
        ys = {y for _, y in t_graph.segments[seg_id].centerline}
        assert ys == {W / 2}


def test_builder_two_lane_separation(t_graph):
    for w_id, e_id in (("W1", "E3"), ("W2", "E2"), ("W3", "E1")):
        yw = t_graph.segments[w_id].centerline[0][1]
        ye = t_graph.segments[e_id].centerline[0][1]
        assert yw - ye == pytest.approx(W)


def test_builder_rejects_bad_config():
    with pytest.raises(MapError):
        build_t_intersection(-1, 400, 60)
    with pytest.raises(MapError):
        build_t_intersection(3.5, 5, 60)  # no room for the junction


def test_builder_deterministic(t_graph):
    again = build_t_intersection(3.5, 400.0, 60.0)
    assert serialize_lane_graph(again) == serialize_lane_graph(t_graph)


# ---------------------------------------------------------------------------
# map document


def test_load_two_segments_one_edge():
    doc = {
        "version": 1,
        "segments": [
            {"id": "a", "kind": "road", "heading": "E", "centerline": [[0, 0], [10, 0]]},
            {"id": "b", "kind": "road", "heading": "E", "centerline": [[10, 0], [20, 0]]},
        ],
        "edges": [
            {"from": "a", "to": "b", "relation": "successor"},
            {"from": "b", "to": "a", "relation": "predecessor"},
        ],
    }
    g = load_lane_graph(json.dumps(doc))
    assert set(g.segments) == {"a", "b"}
    assert g.successors("a") == ["b"]


def test_load_rejects_dangling_edge():
    doc = {
        "segments": [
            {"id": "a", "kind": "road", "heading": "E", "centerline": [[0, 0], [10, 0]]}
        ],
        "edges": [{"from": "a", "to": "ghost", "relation": "successor"}],
    }
    with pytest.raises(MapError, match="ghost"):
        load_lane_graph(json.dumps(doc))


def test_load_rejects_malformed_document():
    with pytest.raises(MapParseError):
        load_lane_graph("not json at all {")
    with pytest.raises(MapParseError, match="segments"):
        load_lane_graph(json.dumps({"edges": []}))


def test_serialize_round_trip(t_graph):
    text = serialize_lane_graph(t_graph)
    again = load_lane_graph(text)
    assert serialize_lane_graph(again) == text


# ---------------------------------------------------------------------------
# route resolution


def test_route_straight_west(t_graph):
    p = resolve_route(t_graph, ["W"])
    assert p.segment_ids == ("W1", "W2", "W3")
    assert set(p.landmarks) == {"lane_start"}
    assert p.total_length == pytest.approx(400.0, abs=1e-6)


def test_route_driveway_right_turn(t_graph):
    p = resolve_route(t_graph, ["S", "W"])
    assert p.segment_ids == ("drive_exit", "turn_SW", "W3")
    assert p.landmarks["turn_start"] < p.landmarks["turn_end"]
    assert p.landmarks["stop_line"] == p.landmarks["turn_start"]


def test_route_west_into_driveway(t_graph):
    p = resolve_route(t_graph, ["W", "N"])
    assert p.segment_ids == ("W1", "turn_WN", "drive_in")
    assert p.landmarks["turn_start"] == pytest.approx(400 / 2 - W, abs=1e-3)


def test_route_errors(t_graph):
    with pytest.raises(RouteError):
        resolve_route(t_graph, [])
    with pytest.raises(RouteError):
        resolve_route(t_graph, ["Q"])
    with pytest.raises(RouteError):
        resolve_route(t_graph, ["N", "W"])  # driveway entrance has no exit turn


def test_landmark_ordering_invariant(t_graph):
    for dirs in (["S", "W"], ["S", "E"], ["W", "N"], ["E", "N"]):
        p = resolve_route(t_graph, dirs)
        assert (
            p.landmarks["lane_start"]
            <= p.landmarks["turn_start"]
            == p.landmarks["stop_line"]
            <= p.landmarks["turn_end"]
            <= p.total_length + 1e-9
        )


# ---------------------------------------------------------------------------
# Frenet transform


def x_axis_path():
    return_path = resolve_route(
        LaneGraph(
            {
                "s": LaneSegment(
                    "s", "road", "E", tuple((float(x), 0.0) for x in range(0, 101, 2))
                )
            },
            (),
        ),
        ["E"],
    )
    return return_path


def test_frenet_axis_aligned():
    p = x_axis_path()
    fs = to_frenet(p, 5.0, 0.0, 0.0, 3.0, 0.0)
    assert (fs.l, fs.l_dot, fs.l_ddot) == pytest.approx((5.0, 3.0, 0.0), abs=1e-9)


def test_frenet_opposing_heading():
    p = x_axis_path()
    fs = to_frenet(p, 5.0, 0.0, math.pi, 3.0, 0.0)
    assert fs.l == pytest.approx(5.0, abs=1e-9)
    assert fs.l_dot == pytest.approx(-3.0, abs=1e-9)


def test_frenet_quarter_circle_derived():
    """Dense-polyline arclength oracle on a radius-20 quarter circle."""
    r = 20.0
    pts = [(r * math.sin(t), r * (1 - math.cos(t))) for t in np.linspace(0, math.pi / 2, 200)]
    sp = ArcLengthSpline(pts)
    # oracle: arclength to the 45 degree point from a dense polyline
    dense = [(r * math.sin(t), r * (1 - math.cos(t))) for t in np.linspace(0, math.pi / 4, 20000)]
    oracle = sum(math.dist(a, b) for a, b in zip(dense, dense[1:]))
    x45, y45 = r * math.sin(math.pi / 4), r * (1 - math.cos(math.pi / 4))
    s, dist, _ = sp.project(x45, y45)
    assert s == pytest.approx(oracle, abs=1e-3)
    assert s == pytest.approx(15.708, abs=1e-3)
    # heading analytic oracle: initial heading + 45 degrees
    assert sp.heading(s) == pytest.approx(math.pi / 4, abs=1e-6)


def test_from_frenet_straight():
    p = x_axis_path()
    cs = from_frenet(p, 5.0, 3.0, 0.0)
    assert (cs.x, cs.y, cs.theta, cs.v, cs.a) == pytest.approx((5, 0, 0, 3, 0), abs=1e-9)


def test_from_frenet_clamps_or_raises():
    p = x_axis_path()
    cs = from_frenet(p, 150.0, 3.0, 0.0)
    assert cs.clamped and cs.x == pytest.approx(100.0, abs=1e-6)
    with pytest.raises(ProjectionError):
        from_frenet(p, 150.0, 3.0, 0.0, strict=True)


def test_projection_rejects_far_states():
    p = x_axis_path()
    with pytest.raises(ProjectionError):
        to_frenet(p, 50.0, 8.0, 0.0, 1.0, 0.0)


_PATH_CACHE = {}


def cached_route(graph, dirs):
    key = tuple(dirs)
    if key not in _PATH_CACHE:
        _PATH_CACHE[key] = resolve_route(graph, list(dirs))
    return _PATH_CACHE[key]


@settings(max_examples=60, deadline=None)
@given(
    dirs=st.sampled_from((("W",), ("S", "W"), ("E", "N"), ("W", "N"))),
    u=st.floats(0.001, 0.999),
    l_dot=st.floats(-30, 30),
    l_ddot=st.floats(-10, 10),
)
def test_frenet_round_trip_property(t_graph, dirs, u, l_dot, l_ddot):
    p = cached_route(t_graph, dirs)
    l = u * p.total_length
    cs = from_frenet(p, l, l_dot, l_ddot)
    fs = to_frenet(p, cs.x, cs.y, cs.theta, cs.v, cs.a)
    assert fs.l == pytest.approx(l, abs=1e-6)
    assert fs.l_dot == pytest.approx(l_dot, abs=1e-6)
    assert fs.l_ddot == pytest.approx(l_ddot, abs=1e-6)


def test_arclength_parameterization_invariant(t_graph):
    p = cached_route(t_graph, ("E", "N"))
    ss = np.linspace(0, p.total_length, 4000)
    pts = np.asarray([p.spline.point(v) for v in ss])
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    for idx in range(40, 4000, 160):
        s = ss[idx]
        assert abs(cum[idx] - s) <= 1e-3 * s


# ---------------------------------------------------------------------------
# conflict points


def brute_force_crossing(path_a, path_b, step=0.1):
    """Spec's derived oracle: 0.1 m sampling + segment intersection."""
    sa = np.arange(0, path_a.total_length, step)
    sb = np.arange(0, path_b.total_length, step)
    A = np.asarray([path_a.spline.point(v) for v in sa])
    B = np.asarray([path_b.spline.point(v) for v in sb])
    r = B[:-1]
    d2 = B[1:] - B[:-1]
    for i in range(len(A) - 1):
        p = A[i]
        d1 = A[i + 1] - p
        rp = r - p
        den = d1[0] * d2[:, 1] - d1[1] * d2[:, 0]
        ok = np.abs(den) > 1e-12
        t = np.where(ok, (rp[:, 0] * d2[:, 1] - rp[:, 1] * d2[:, 0]) / np.where(ok, den, 1), -1)
        u = np.where(ok, (rp[:, 0] * d1[1] - rp[:, 1] * d1[0]) / np.where(ok, den, 1), -1)
        hits = np.nonzero(ok & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1))[0]
        if len(hits):
            j = hits[0]
            return tuple(p + t[j] * d1)
    return None


def test_conflict_crossing_matches_brute_force(t_graph):
    ego = resolve_route(t_graph, ["W"])
    hero = resolve_route(t_graph, ["E", "N"])
    cp = conflict_point(ego, hero)
    oracle = brute_force_crossing(ego, hero)
    assert oracle is not None
    assert cp.point[0] == pytest.approx(oracle[0], abs=0.2)
    assert cp.point[1] == pytest.approx(oracle[1], abs=0.2)
    # the crossing sits on the westbound centerline inside the mouth x-extent
    assert cp.point[1] == pytest.approx(W / 2, abs=1e-3)
    assert -W <= cp.point[0] <= W
    assert "lane_turn" in ego.landmarks and "lane_turn" in hero.landmarks


def test_conflict_identical_paths_merge_at_zero(t_graph):
    a = resolve_route(t_graph, ["W"])
    b = resolve_route(t_graph, ["W"])
    cp = conflict_point(a, b)
    assert cp.kind == "merge"
    assert cp.frac_a == pytest.approx(0.0, abs=1e-9)
    assert cp.frac_b == pytest.approx(0.0, abs=1e-9)


def test_conflict_parallel_lanes_error(t_graph):
    with pytest.raises(NoConflictError):
        conflict_point(resolve_route(t_graph, ["W"]), resolve_route(t_graph, ["E"]))


def test_conflict_merge_case(t_graph):
    ego = resolve_route(t_graph, ["S", "W"])
    hero = resolve_route(t_graph, ["W"])
    cp = conflict_point(ego, hero)
    assert cp.kind == "merge"
    # entry of the shared suffix segment W3
    assert cp.arclength_a == pytest.approx(ego.landmarks["turn_end"], abs=1e-3)


def test_conflict_divergence_case(t_graph):
    ego = resolve_route(t_graph, ["W"])
    hero = resolve_route(t_graph, ["W", "N"])
    cp = conflict_point(ego, hero)
    assert cp.kind == "divergence"
    assert cp.arclength_b == pytest.approx(hero.landmarks["turn_start"], abs=1e-3)


def test_conflict_symmetry(t_graph):
    for dirs_a, dirs_b in ((["W"], ["E", "N"]), (["S", "W"], ["W"])):
        a1, b1 = resolve_route(t_graph, dirs_a), resolve_route(t_graph, dirs_b)
        c1 = conflict_point(a1, b1)
        a2, b2 = resolve_route(t_graph, dirs_a), resolve_route(t_graph, dirs_b)
        c2 = conflict_point(b2, a2)
        assert c1.point[0] == pytest.approx(c2.point[0], abs=1e-6)
        assert c1.point[1] == pytest.approx(c2.point[1], abs=1e-6)
        assert c1.frac_a == pytest.approx(c2.frac_b, abs=1e-6)


def test_conflict_point_near_both_splines(t_graph):
    ego = resolve_route(t_graph, ["W"])
    hero = resolve_route(t_graph, ["E", "N"])
    cp = conflict_point(ego, hero)
    pa = ego.spline.point(cp.frac_a * ego.total_length)
    pb = hero.spline.point(cp.frac_b * hero.total_length)
    assert math.dist(pa, cp.point) <= 0.5
    assert math.dist(pb, cp.point) <= 0.5
