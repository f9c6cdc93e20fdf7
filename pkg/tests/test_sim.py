import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wad.sim import routing as R
from wad.sim.geometry import min_turn_radius
from wad.sim.lights import CYCLE, TrafficLight, junction_lights, light_tick
from wad.sim.town import LAYOUTS, _build, build_town
from wad.sim.weather import TEST_WEATHERS, TRAIN_WEATHERS, WEATHERS
from wad.sim.world import (DT, ActionError, AgentState, SpawnError, add_static_vehicle, bicycle_step,
                           collision_intensity, lateral_distance, make_world, snapshot, spawn_traffic, step)


def straight_route(town="A", length=400.0):
    mg = build_town(town)
    lane, s0 = mg.named["straight"]
    return R.route_along(mg, [lane], s0, length)


# ---------------------------------------------------------------- towns
def test_straight_route_has_201_waypoints():
    r = straight_route()
    assert len(r.xy) == 400 // 2 + 1
    assert set(r.option_names) == {"follow"}


def test_build_town_is_pure():
    assert _build("A").geometry_dump() == _build("A").geometry_dump()


def test_towns_differ():
    a, b = straight_route("A"), straight_route("B")
    assert not np.allclose(a.xy[0], b.xy[0]) or not np.allclose(a.xy[-1], b.xy[-1])
    assert build_town("A").geometry_dump() != build_town("B").geometry_dump()


def test_unknown_town():
    with pytest.raises(ValueError):
        build_town("C")


@pytest.mark.parametrize("town", ["A", "B"])
def test_town_contents(town):
    mg = build_town(town)
    lay = LAYOUTS[town]
    assert mg.road_lane(*lay.straight).length >= 500.0
    kinds = [j.kind for j in mg.junctions]
    assert "roundabout" in kinds
    cross = mg.junction_at(lay.cross)
    assert cross.kind == "cross" and cross.signalized and len(cross.arms) == 4
    ring = next(j for j in mg.junctions if j.kind == "roundabout")
    exits = [l for l in mg.lanes if l.node == ring.id and l.exit_arm is not None]
    assert len(exits) == 4


@pytest.mark.parametrize("town", ["A", "B"])
def test_lane_graph_connected_end_to_end(town):
    mg = build_town(town)
    for lane in mg.lanes:
        assert lane.successors
        for s in lane.successors:
            assert np.linalg.norm(lane.points[-1] - mg.lanes[s].points[0]) < 1e-6
    # every junction entry lane has exactly one stop line (one arm entry)
    for jn in mg.junctions:
        if jn.is_junction:
            assert len(jn.entries) == len(jn.arms)


@pytest.mark.parametrize("town", ["A", "B"])
def test_turn_radii_drivable(town):
    mg = build_town(town)
    radii = [min_turn_radius(l.points) for l in mg.lanes if l.kind != "road"]
    assert min(radii) > 6.0


def test_geometry_dump_format():
    line = build_town("A").geometry_dump().splitlines()[0].split()
    assert line[0] == "0" and line[1] in ("road", "connector", "ring")
    x, y = line[3].split(",")
    float(x), float(y)


# ---------------------------------------------------------------- routes
def one_turn_route(town="A"):
    mg = build_town(town)
    a, b, c = LAYOUTS[town].one_turn
    lane = mg.road_lanes[(a, b)]
    s0 = mg.lanes[lane].length - 220.0
    seq = R.follow_maneuvers(mg, lane, ["left"], 400.0, s0=s0)
    return R.route_along(mg, seq, s0, 400.0)


def test_left_turn_labelled_within_lookahead():
    r = one_turn_route()
    ev = r.stops[0]
    assert ev.maneuver == "left"
    names = np.array(r.option_names)
    before = (r.cum >= ev.s - 20.0) & (r.cum < ev.s)
    assert before.any() and set(names[before]) == {"left"}
    assert set(names[r.cum < ev.s - 20.0]) == {"follow"}
    assert set(names[r.cum >= ev.s_exit]) == {"follow"}


def test_route_spacing_and_shortest_path():
    mg = build_town("A")
    r = one_turn_route()
    gaps = np.linalg.norm(np.diff(r.xy, axis=0), axis=1)
    assert gaps.max() <= 2.5
    assert np.all(np.abs(gaps[:-1] - 2.0) <= 0.01)
    start = (r.lane_spans[0][0], r.lane_position(0.0)[1])
    goal = (r.lane_spans[-1][0], r.lane_position(r.length)[1])
    again = R.route(mg, start, goal)
    assert again.length == pytest.approx(r.length, abs=1e-6)


def test_single_lane_route_all_follow():
    mg = build_town("A")
    lane, _ = mg.named["straight"]
    r = R.route(mg, (lane, 10.0), (lane, 300.0))
    assert set(r.option_names) == {"follow"}
    assert r.length == pytest.approx(290.0)


def test_unreachable_goal():
    mg = build_town("A")
    with pytest.raises(R.RouteError):
        R.route(mg, (0, 1.0), (0, 1e6))
    import copy
    cut = copy.deepcopy(mg)
    for lane in cut.lanes:
        if lane.id != 1:
            lane.successors = [s for s in lane.successors if s != 1]
    with pytest.raises(R.RouteError):
        R.shortest_lane_path(cut, 0, 1)


def test_roundabout_third_exit_passes_two_exits():
    mg = build_town("A")
    ring = next(j for j in mg.junctions if j.kind == "roundabout")
    entry_arm = LAYOUTS["A"].roundabout_entry
    lane_in = next(l for l, a in ring.entries.items() if a == entry_arm)
    seq = R.roundabout_lanes(mg, lane_in, exits_to_skip=2)
    passed = 0
    for prev, nxt in zip(seq, seq[1:]):
        lane = mg.lanes[prev]
        if lane.kind == "ring":
            exits = [s for s in lane.successors if mg.lanes[s].kind == "connector"]
            if exits and nxt not in exits:
                passed += 1
    assert passed == 2
    exit_lane = mg.lanes[seq[-2]]
    assert exit_lane.exit_arm == "W"      # S entry, CCW: E, N passed, leave at W


# ---------------------------------------------------------------- lateral distance
def test_lateral_distance():
    r = straight_route()
    p, h = r.point_at(100.0)
    right = np.array([math.sin(h), -math.cos(h)])
    assert lateral_distance(r, p) == pytest.approx(0.0, abs=1e-9)
    assert lateral_distance(r, p + right) == pytest.approx(1.0)
    assert lateral_distance(r, p + 1.75 * right) == pytest.approx(1.75)
    assert lateral_distance(r, p - 1.75 * right) == pytest.approx(-1.75)
    with pytest.raises(R.OffMapError):
        lateral_distance(r, p + 25.0 * right)


# ---------------------------------------------------------------- dynamics
def test_bicycle_balanced_forces():
    v = 5.0
    throttle = 0.1 * v / 3.0
    x, y, th, v2 = bicycle_step(0.0, 0.0, 0.0, v, 0.0, throttle, 0.0)
    assert x == pytest.approx(5.0 / 6.0) and y == pytest.approx(0.0)
    assert v2 == pytest.approx(v)


def test_no_reverse():
    assert bicycle_step(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0)[3] == 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 11.1), st.floats(-1, 1), st.floats(0.3, 1.0))
def test_coasting_never_speeds_up(v, steer, mu):
    v2 = bicycle_step(0.0, 0.0, 0.0, v, steer, 0.0, 0.0, mu)[3]
    assert 0.0 <= v2 <= v


def test_world_step_kinematics_and_action_checks():
    w = make_world("A", straight_route(), seed=0)
    w.ego.v = 5.0
    x0, y0, th = w.ego.x, w.ego.y, w.ego.theta
    step(w, (0.0, 0.1 * 5.0 / 3.0, 0.0))
    along = (w.ego.x - x0) * math.cos(th) + (w.ego.y - y0) * math.sin(th)
    across = -(w.ego.x - x0) * math.sin(th) + (w.ego.y - y0) * math.cos(th)
    assert along == pytest.approx(5.0 / 6.0) and across == pytest.approx(0.0, abs=1e-12)
    step(w, (3.0, 2.0, -1.0))
    assert w.status.clamped
    with pytest.raises(ActionError):
        step(w, (float("nan"), 0.0, 0.0))


# ---------------------------------------------------------------- collisions
def test_stationary_overlap_has_zero_intensity():
    a = AgentState(0.0, 0.0, 0.0)
    b = AgentState(1.0, 0.5, 0.3)
    assert collision_intensity(a, b) == 0.0


def test_head_on_closing_speed():
    a = AgentState(0.0, 0.0, 0.0, 5.0)
    b = AgentState(4.0, 0.0, math.pi, 3.0)
    assert collision_intensity(a, b) == pytest.approx(8.0)
    assert collision_intensity(AgentState(0, 0, 0), AgentState(10, 0, 0)) is None


box = st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi), st.floats(0, 10))


@settings(max_examples=200, deadline=None)
@given(box, box)
def test_collision_symmetry(p, q):
    a = AgentState(p[0], p[1], p[2], p[3])
    b = AgentState(q[0], q[1], q[2], q[3])
    ia, ib = collision_intensity(a, b), collision_intensity(b, a)
    assert (ia is None) == (ib is None)
    if ia is not None:
        assert ia == pytest.approx(ib, abs=1e-9)


def test_ego_collision_with_parked_car():
    mg = build_town("A")
    r = straight_route()
    w = make_world("A", r, seed=0)
    lane, s0 = mg.named["straight"]
    add_static_vehicle(w, lane, s0 + 6.0)
    w.ego.v = 6.0
    hit = None
    for _ in range(12):
        step(w, (0.0, 0.0, 0.0))
        if w.status.collision is not None:
            hit = w.status
            break
    assert hit is not None and hit.new_collision and hit.collision > 0.5


# ---------------------------------------------------------------- spawning
def test_spawn_deterministic_and_non_overlapping():
    def placements(seed):
        w = make_world("A", straight_route(), seed=0)
        spawn_traffic(w, 20, 30, seed=seed)
        return [(a.x, a.y) for a in w.agents()], w

    p1, w = placements(3)
    p2, _ = placements(3)
    assert p1 == p2
    assert p1 != placements(4)[0]
    cars = np.array([(a.x, a.y) for a in w.npcs])
    d = np.linalg.norm(cars[:, None] - cars[None], axis=2) + np.eye(len(cars)) * 1e9
    assert d.min() > 4.5
    assert len(w.npcs) == 20 and len(w.peds) == 30


def test_spawn_empty_and_capacity():
    w = make_world("A", straight_route(), seed=0)
    spawn_traffic(w, 0, 0)
    assert w.npcs == [] and w.peds == []
    with pytest.raises(SpawnError, match="spawn points"):
        spawn_traffic(w, 100000, 0)


# ---------------------------------------------------------------- lights
def test_light_green_to_yellow():
    light = TrafficLight(0, 0, "green", 9.9)
    light_tick([light], 1 / 6)
    assert light.phase == "yellow"
    assert light.timer == pytest.approx(0.0667, abs=1e-4)


def test_light_full_cycle():
    assert CYCLE * 6 == pytest.approx(138)
    for start in ("green", "yellow", "red"):
        light = TrafficLight(0, 0, start, 1.0)
        phases = []
        for _ in range(138):
            light_tick([light], DT)
            phases.append(light.phase)
        assert light.phase == start and light.timer == pytest.approx(1.0, abs=1e-6)
        for a, b in zip(phases, phases[1:]):
            assert (a, b) != ("red", "yellow")


def test_light_groups_never_both_green():
    lights = junction_lights(0, 4.2)
    for _ in range(300):
        light_tick(lights, DT)
        assert not (lights[0].phase == "green" and lights[1].phase == "green")


def test_weather_presets():
    assert len(WEATHERS) == 5 and len(TRAIN_WEATHERS) == 3 and len(TEST_WEATHERS) == 2
    assert all(0 < w.friction <= 1 and w.noise >= 0 for w in WEATHERS.values())


# ---------------------------------------------------------------- whole-world properties
def _traffic_world(seed, town="A"):
    mg = build_town(town)
    rng = np.random.default_rng(seed)
    r = R.random_route(mg, mg.spawn_points[int(rng.integers(len(mg.spawn_points)))], 1500.0, rng)
    w = make_world(town, r, seed=seed)
    spawn_traffic(w, 12, 15)
    return w


def test_determinism_same_seed_same_trajectory():
    acts = np.random.default_rng(5).uniform([-0.2, 0, 0], [0.2, 0.6, 0.1], size=(150, 3))

    def run():
        w = _traffic_world(11)
        out = []
        for a in acts:
            step(w, a)
            out.append(snapshot(w))
        return out

    assert run() == run()


def test_npcs_never_enter_on_red():
    w = _traffic_world(2)
    mg = w.map
    prev = {v.id: v.lane for v in w.npcs}
    for _ in range(1500):
        step(w, (0.0, 0.0, 1.0))
        for v in w.npcs:
            if v.lane != prev[v.id] and v.lane in w.geo.gated:
                light = w.light_for(w.geo.gated[v.lane], mg.lanes[v.lane].entry_arm)
                assert light is None or light.phase != "red"
            prev[v.id] = v.lane
