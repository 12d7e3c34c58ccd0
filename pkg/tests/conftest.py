import pytest

from scenorch.lane_map import build_t_intersection
from scenorch.solver_bridge import resolve_backend

C1_TEXT = """\
Actor 0:
- W
- [t0, go, t1, go, t2]
Actor 1:
- W, N
- [t0, go, t1, dec, t2]

Constraints:
A0v(t0) == ego_initial_speed_mps
A0x(t0) == turn - 100
A1v(t0) == initial_speed_mps
A1x(t1) - A0x(t1) == distance_ahead_of_ego_m
A1x(t1) == turn
A1v(t2) == 0
A0(t1) == A1(t1)
"""

C1_BINDINGS = {
    "ego_initial_speed_mps": 10.0,
    "initial_speed_mps": 8.0,
    "distance_ahead_of_ego_m": 50.0,
}

C2_TEXT = """\
Actor 0:
- S, W
- [t0, go, t1, go, t2]
Actor 1:
- W
- [t0, dec, t1, stop, t2, acc, t3]

Constraints:
A0v(t0) == ego_initial_speed_mps
A1v(t0) == initial_speed_mps
A1a(dec) == deceleration_mpss
A1v(t1) == 0
A1x(t1) == turn - distance_to_driveway_m
A1v(stop) == 0
A1a(stop) == 0
A0x(t1) == turn
A0(t1) == A1(t1)
A1(t2) > A0(t1)
A1v(t3) == initial_speed_mps
"""

C2_BINDINGS = {
    "ego_initial_speed_mps": 7.0,
    "initial_speed_mps": 8.0,
    "deceleration_mpss": -2.0,
    "distance_to_driveway_m": 15.0,
}


@pytest.fixture(scope="session")
def backend():
    b = resolve_backend()
    yield b
    if hasattr(b, "close"):
        b.close()


@pytest.fixture(scope="session")
def t_graph():
    return build_t_intersection(3.5, 400.0, 60.0)


@pytest.fixture(scope="session")
def scenario_dir(request):
    return request.config.rootpath / "scenarios"
