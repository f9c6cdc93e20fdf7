"""World state and the 6 Hz simulation step."""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import box_corners, obb_intersects_aabbs, obb_overlap, wrap_angle
from .lights import TrafficLight, junction_lights, light_tick
from .routing import OffMapError, Route
from .town import LANE_WIDTH, MapGraph, build_town, sidewalk_axis
from .weather import WeatherPreset, get_weather

DT = 1.0 / 6.0
WHEELBASE = 2.5
MAX_STEER = math.radians(35.0)
THROTTLE_GAIN = 3.0
BRAKE_GAIN = 8.0
DRAG = 0.1
V_MAX = 11.1
CAR_LENGTH, CAR_WIDTH = 4.5, 2.0
PED_SIZE = 0.6

OFF_MAP = 20.0
LIGHT_LOOKAHEAD = 40.0
LEADER_RANGE = 20.0
PLANNER_RANGE = 35.0
GRANT_RANGE = 30.0
COMFORT_DECEL = 3.5
NPC_ACCEL, NPC_DECEL = 3.0, 8.0
FOLLOW_GAP, STOP_GAP, MIN_GAP = 10.0, 4.0, 2.0
TURN_SPEED = 5.0
PED_SPEED = (1.0, 1.6)
PED_CROSS_RATE = 0.002           # per pedestrian per tick
PED_CROSS_CLEARANCE = 30.0
PED_CROSS_MARGIN = 30.0


class ActionError(ValueError):
    pass


class SpawnError(ValueError):
    pass


@dataclass
class AgentState:
    x: float
    y: float
    theta: float
    v: float = 0.0
    length: float = CAR_LENGTH
    width: float = CAR_WIDTH
    kind: str = "car"

    @property
    def pose(self) -> tuple[float, float, float]:
        return self.x, self.y, self.theta

    def box(self):
        return self.x, self.y, self.theta, self.length, self.width


class Vehicle(AgentState):
    """NPC car following a lane path."""

    def __init__(self, ident, path, s, cruise, static=False):
        super().__init__(0.0, 0.0, 0.0, 0.0)
        self.id = ident
        self.path = list(path)
        self.k = 0
        self.s = float(s)
        self.cruise = cruise
        self.static = static
        self.grant: int | None = None

    @property
    def lane(self) -> int:
        return self.path[self.k]


class Pedestrian(AgentState):
    def __init__(self, ident, walk, t, direction, speed):
        super().__init__(0.0, 0.0, 0.0, 0.0, PED_SIZE, PED_SIZE, "pedestrian")
        self.id = ident
        self.walk = walk            # sidewalk index
        self.t = t                  # position along the sidewalk axis
        self.dir = direction
        self.speed = speed
        self.crossing: tuple | None = None   # (start xy, end xy, progress m, total m, target sidewalk)


@dataclass
class EgoStatus:
    """Per-tick summary of the ego's situation; everything reward and perception need."""
    step: int
    x: float
    y: float
    theta: float
    v: float
    route_s: float = 0.0
    route_idx: int = 0
    lateral: float = 0.0
    heading_error: float = 0.0
    off_map: bool = False
    option: int = 0
    light: str | None = None          # phase of the light governing the ego lane
    light_remaining: float = math.inf
    stop_dist: float = math.inf       # stop line minus ego centre (route metres); <0 once past it
    in_junction: bool = False
    leader_gap: float = math.inf      # bumper gap to the nearest agent within half a lane of the route
    leader_v: float = 0.0
    planner_gap: float = math.inf     # wider, longer look for the privileged driver
    planner_v: float = 0.0
    hold_s: float = math.inf          # route s where the ego centre must wait (no right of way)
    collision: float | None = None    # max contact intensity this tick (m/s)
    collision_kind: str | None = None
    new_collision: bool = False
    sidewalk: bool = False
    crossed_red: bool = False
    goal_reached: bool = False
    odometer: float = 0.0
    clamped: bool = False

    @property
    def in_stop_zone(self) -> bool:
        return 0.0 <= self.stop_dist <= 25.0

    @property
    def red(self) -> bool:
        return self.light == "red"


class _LaneGeo:
    """Per-lane python lists for fast scalar interpolation."""

    def __init__(self, mg: MapGraph):
        self.cum, self.xs, self.ys, self.hs, self.length = [], [], [], [], []
        for lane in mg.lanes:
            p = lane.points
            d = np.diff(p, axis=0)
            self.cum.append(lane.cum.tolist())
            self.xs.append(p[:, 0].tolist())
            self.ys.append(p[:, 1].tolist())
            self.hs.append(np.arctan2(d[:, 1], d[:, 0]).tolist())
            self.length.append(lane.length)
        self.gated: dict[int, int] = {}        # entry connector -> junction id (needs right of way)
        self.junction_lane = [False] * len(mg.lanes)
        self.slow = [False] * len(mg.lanes)
        self.ring_yield: dict[int, int] = {}   # ring piece -> entry connector merging at its end
        for lane in mg.lanes:
            if lane.node is None:
                continue
            jn = mg.junctions[lane.node]
            if not jn.is_junction:
                self.slow[lane.id] = True
                continue
            self.junction_lane[lane.id] = True
            self.slow[lane.id] = lane.kind == "ring" or lane.maneuver != "straight"
        for jn in mg.junctions:
            if not jn.is_junction:
                continue
            for lin, arm in jn.entries.items():
                for c in mg.lanes[lin].successors:
                    self.gated[c] = jn.id
            if jn.kind == "roundabout":
                for entry, ring in jn.conflicts.items():
                    merged = mg.lanes[entry].successors[0]
                    for r in ring:
                        if merged in mg.lanes[r].successors:
                            self.ring_yield[r] = entry
        self.lane_road = [mg.lanes[i].road for i in range(len(mg.lanes))]

    def pose(self, lane: int, s: float) -> tuple[float, float, float]:
        cum = self.cum[lane]
        i = bisect_right(cum, s) - 1
        i = min(max(i, 0), len(cum) - 2)
        seg = cum[i + 1] - cum[i]
        t = (s - cum[i]) / seg if seg > 0 else 0.0
        xs, ys = self.xs[lane], self.ys[lane]
        return xs[i] + t * (xs[i + 1] - xs[i]), ys[i] + t * (ys[i + 1] - ys[i]), self.hs[lane][i]


@lru_cache(maxsize=None)
def lane_geo(town: str) -> _LaneGeo:
    return _LaneGeo(build_town(town))


@dataclass
class WorldState:
    map: MapGraph
    ego: AgentState
    route: Route
    weather: WeatherPreset
    seed: int
    lights: list[TrafficLight] = field(default_factory=list)
    npcs: list[Vehicle] = field(default_factory=list)
    peds: list[Pedestrian] = field(default_factory=list)
    step_count: int = 0
    rng: np.random.Generator | None = None
    grants: dict[int, int] = field(default_factory=dict)     # connector -> owner (-1 ego, else NPC id)
    status: EgoStatus | None = None
    contacts: set = field(default_factory=set)
    last_action: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)
        self.geo = lane_geo(self.map.town)
        self._light_index = {(l.junction, l.group): l for l in self.lights}

    @property
    def time(self) -> float:
        return self.step_count * DT

    def light_for(self, junction: int, arm: str) -> TrafficLight | None:
        return self._light_index.get((junction, self.map.junctions[junction].light_group(arm)))

    def agents(self) -> list[AgentState]:
        return [*self.npcs, *self.peds]


def make_world(town: str, route: Route, weather: str | WeatherPreset = "clear_day", seed: int = 0,
               start_offset: float = 0.0, light_offset: float | None = None) -> WorldState:
    """Empty world with the ego at route arc length ``start_offset`` and seeded light phases."""
    mg = build_town(town)
    w = get_weather(weather) if isinstance(weather, str) else weather
    rng = np.random.default_rng(seed)
    lights = []
    for jn in mg.junctions:
        if jn.signalized:
            off = float(rng.uniform(0, 23.0)) if light_offset is None else light_offset
            lights.extend(junction_lights(jn.id, off))
    p, h = route.point_at(start_offset)
    ego = AgentState(float(p[0]), float(p[1]), h, 0.0)
    world = WorldState(map=mg, ego=ego, route=route, weather=w, seed=seed, lights=lights, rng=rng)
    world.status = _ego_status(world, None, start_offset)
    return world


# ---------------------------------------------------------------- spawning
def spawn_traffic(world: WorldState, n_vehicles: int, n_pedestrians: int, seed: int | None = None,
                  clearance: float = 25.0) -> WorldState:
    """Place NPC cars on free spawn points and pedestrians on sidewalks (seeded, non-overlapping)."""
    if n_vehicles < 0 or n_pedestrians < 0:
        raise SpawnError("traffic counts must be non-negative")
    rng = np.random.default_rng(world.seed if seed is None else seed)
    mg, geo = world.map, world.geo
    ego = world.ego
    taken = [(a.x, a.y) for a in world.npcs]
    free = []
    for lane, s in mg.spawn_points:
        x, y, _ = geo.pose(lane, s)
        if math.hypot(x - ego.x, y - ego.y) < clearance:
            continue
        if any(math.hypot(x - a, y - b) < 8.0 for a, b in taken):
            continue
        free.append((lane, s))
    if n_vehicles > len(free):
        raise SpawnError(f"asked for {n_vehicles} vehicles but only {len(free)} spawn points are free")
    if n_pedestrians > len(mg.ped_spawn_points):
        raise SpawnError(f"asked for {n_pedestrians} pedestrians but capacity is {len(mg.ped_spawn_points)}")
    base = len(world.npcs)
    for k, idx in enumerate(rng.choice(len(free), n_vehicles, replace=False)):
        lane, s = free[int(idx)]
        veh = Vehicle(base + k, [lane], s, cruise=float(rng.uniform(6.5, 8.3)))
        _extend_path(world, veh, rng)
        _place(geo, veh)
        world.npcs.append(veh)
    base = len(world.peds)
    for k, idx in enumerate(rng.choice(len(mg.ped_spawn_points), n_pedestrians, replace=False)):
        walk, t = mg.ped_spawn_points[int(idx)]
        ped = Pedestrian(base + k, walk, t, 1 if rng.random() < 0.5 else -1, float(rng.uniform(*PED_SPEED)))
        _place_ped(world, ped)
        world.peds.append(ped)
    world.status = _ego_status(world, None, world.status.route_s if world.status else 0.0)
    return world


def add_static_vehicle(world: WorldState, lane: int, s: float) -> Vehicle:
    veh = Vehicle(len(world.npcs), [lane], s, cruise=0.0, static=True)
    _place(world.geo, veh)
    world.npcs.append(veh)
    world.status = _ego_status(world, None, world.status.route_s if world.status else 0.0)
    return veh


def _extend_path(world, veh, rng=None):
    rng = rng or world.rng
    succ = world.map.lanes
    while len(veh.path) - veh.k < 5:
        options = succ[veh.path[-1]].successors
        veh.path.append(options[int(rng.integers(len(options)))])


def _place(geo, veh):
    veh.x, veh.y, veh.theta = geo.pose(veh.lane, veh.s)


def _place_ped(world, ped):
    if ped.crossing is None:
        origin, axis = _walk_axis(world.map, ped.walk)
        ped.x, ped.y = origin[0] + axis[0] * ped.t, origin[1] + axis[1] * ped.t
        ped.theta = math.atan2(axis[1] * ped.dir, axis[0] * ped.dir)
        ped.v = ped.speed
    else:
        (x0, y0), (x1, y1), prog, total, _ = ped.crossing
        f = prog / total
        ped.x, ped.y = x0 + f * (x1 - x0), y0 + f * (y1 - y0)
        ped.theta = math.atan2(y1 - y0, x1 - x0)
        ped.v = ped.speed


@lru_cache(maxsize=None)
def _axes_for(town: str):
    mg = build_town(town)
    out = []
    for r in mg.sidewalks:
        o, a = sidewalk_axis(r)
        out.append(((float(o[0]), float(o[1])), (float(a[0]), float(a[1])), float(max(r[2] - r[0], r[3] - r[1]))))
    return out


def _walk_axis(mg, k):
    o, a, _ = _axes_for(mg.town)[k]
    return o, a


# ---------------------------------------------------------------- ego dynamics
def bicycle_step(x, y, theta, v, steer, throttle, brake, friction=1.0, dt=DT):
    """One explicit-Euler tick of the kinematic bicycle (position uses the pre-update speed)."""
    delta = steer * MAX_STEER
    accel = friction * (THROTTLE_GAIN * throttle - BRAKE_GAIN * brake) - DRAG * v
    x += v * math.cos(theta) * dt
    y += v * math.sin(theta) * dt
    theta = float(wrap_angle(theta + v / WHEELBASE * math.tan(delta) * dt))
    v = min(max(v + accel * dt, 0.0), V_MAX)
    return x, y, theta, v


def _check_action(action):
    steer, throttle, brake = (float(a) for a in action)
    if any(math.isnan(a) for a in (steer, throttle, brake)):
        raise ActionError(f"NaN in action {action!r}")
    clipped = (min(max(steer, -1.0), 1.0), min(max(throttle, 0.0), 1.0), min(max(brake, 0.0), 1.0))
    return clipped, clipped != (steer, throttle, brake)


def step(world: WorldState, action, dt: float = DT) -> WorldState:
    """Advance the world one tick in place and return it."""
    (steer, throttle, brake), clamped = _check_action(action)
    world.last_action = (steer, throttle, brake)
    prev = world.status
    light_tick(world.lights, dt)
    ego = world.ego
    ego.x, ego.y, ego.theta, ego.v = bicycle_step(ego.x, ego.y, ego.theta, ego.v, steer, throttle, brake,
                                                  world.weather.friction, dt)
    occ = _occupancy(world, prev)
    _grant_bookkeeping(world, prev, occ)
    _step_vehicles(world, occ, dt)
    _step_pedestrians(world, dt)
    world.step_count += 1
    st = _ego_status(world, prev, prev.route_s if prev else 0.0)
    st.clamped = clamped
    if prev is not None:
        st.odometer = prev.odometer + math.hypot(ego.x - prev.x, ego.y - prev.y)
    world.status = st
    return world


# ---------------------------------------------------------------- right of way
def _occupancy(world, status):
    """lane id -> list of (s, length, v, owner) for every vehicle-like body on it."""
    occ: dict[int, list] = {}
    for veh in world.npcs:
        occ.setdefault(veh.lane, []).append((veh.s, veh.length, veh.v, veh.id))
    if status is not None and not status.off_map and abs(status.lateral) < 3.0:
        lane, s = world.route.lane_position(status.route_s)
        occ.setdefault(lane, []).append((s, world.ego.length, world.ego.v, -1))
    mg = world.map
    for ped in world.peds:
        if ped.crossing is None:
            continue
        road = mg.sidewalk_road[ped.crossing[4]]
        for lane in road:
            x0, y0 = world.geo.xs[lane][0], world.geo.ys[lane][0]
            h = world.geo.hs[lane][0]
            s = (ped.x - x0) * math.cos(h) + (ped.y - y0) * math.sin(h)
            occ.setdefault(lane, []).append((s, ped.length, 0.0, -2 - ped.id))
    return occ


def _blocked(world, conn, owner, occ) -> bool:
    jn = world.map.junctions[world.geo.gated[conn]]
    for other in jn.conflicts.get(conn, ()):
        holder = world.grants.get(other)
        if holder is not None and holder != owner:
            return True
        for entry in occ.get(other, ()):
            if entry[3] != owner:
                return True
    # the exit lane must have room to leave the box
    exit_lane = world.map.lanes[conn].successors[0]
    if world.geo.junction_lane[exit_lane]:
        return False
    for s, length, v, who in occ.get(exit_lane, ()):
        if who != owner and s < 8.0 + length and v < 1.0:
            return True
    return False


def _may_enter(world, conn, arm, dist, v, to_line) -> bool:
    """Signal check for entering ``conn`` from ``arm``.

    ``dist`` is the room left to the stopping point, ``to_line`` the distance to the stop line.
    On yellow only a vehicle that can no longer stop comfortably, and will clear the line in
    time, may go.
    """
    light = world.light_for(world.geo.gated[conn], arm)
    if light is None or light.phase == "green":
        return True
    if light.phase == "yellow":
        return v * v / (2 * COMFORT_DECEL) > dist and to_line < v * light.remaining - 0.5
    return False


def _should_drop(world, conn, arm, dist, v, to_line) -> bool:
    """Give the right of way back when the light changed and the line is still ahead."""
    light = world.light_for(world.geo.gated[conn], arm)
    if light is None or light.phase == "green":
        return False
    if light.phase == "red":
        return True
    return v * v / (2 * COMFORT_DECEL) <= dist or to_line >= v * light.remaining


def _first_in_queue(occ, lane, s, owner) -> bool:
    return not any(e[1] > 1.0 and e[0] > s and e[3] != owner for e in occ.get(lane, ()))


def _try_grant(world, conn, owner, arm, dist, v, occ, to_line) -> bool:
    holder = world.grants.get(conn)
    if holder == owner:
        if to_line > 0 and _should_drop(world, conn, arm, dist, v, to_line):
            del world.grants[conn]
            return False
        return True
    if holder is not None:
        return False
    if not _may_enter(world, conn, arm, dist, v, to_line) or _blocked(world, conn, owner, occ):
        return False
    world.grants[conn] = owner
    return True


def _ring_blocked(world, ring_lane, owner, occ) -> bool:
    entry = world.geo.ring_yield.get(ring_lane)
    if entry is None:
        return False
    holder = world.grants.get(entry)
    if holder is not None and holder != owner:
        return True
    return any(e[3] != owner for e in occ.get(entry, ()))


def _grant_bookkeeping(world, prev, occ):
    """Release grants whose holder has left the junction (ego grants handled in _ego_status)."""
    if not world.grants:
        return
    alive = {veh.id: veh for veh in world.npcs}
    for conn, owner in list(world.grants.items()):
        if owner == -1:
            continue
        veh = alive.get(owner)
        if veh is None or _cleared(veh, conn):
            del world.grants[conn]


def _cleared(veh, conn) -> bool:
    """True once the vehicle's tail has left the gated connector."""
    if conn in veh.path[veh.k:]:
        return False
    return veh.k == 0 or veh.path[veh.k - 1] != conn or veh.s > veh.length


# ---------------------------------------------------------------- NPC vehicles
def _npc_leader(world, veh, occ, lookahead=30.0):
    geo = world.geo
    best_gap, best_v = math.inf, 0.0
    offset = -veh.s
    half = veh.length / 2
    for j in range(veh.k, len(veh.path)):
        lane = veh.path[j]
        for s, length, v, who in occ.get(lane, ()):
            if who == veh.id:
                continue
            d = offset + s
            if d <= 0.0:
                continue
            gap = d - half - length / 2
            if gap < best_gap:
                best_gap, best_v = gap, v
        offset += geo.length[lane]
        if offset > lookahead:
            break
    # the ego, geometrically (it may be anywhere)
    ego = world.ego
    dx, dy = ego.x - veh.x, ego.y - veh.y
    c, s_ = math.cos(veh.theta), math.sin(veh.theta)
    lon = dx * c + dy * s_
    lat = -dx * s_ + dy * c
    if 0.0 < lon < lookahead and abs(lat) < 0.5 * LANE_WIDTH + 0.5:
        gap = lon - half - ego.length / 2
        if gap < best_gap:
            best_gap, best_v = gap, ego.v * math.cos(ego.theta - veh.theta)
    return best_gap, max(best_v, 0.0)


def _step_vehicles(world, occ, dt):
    geo, mg = world.geo, world.map
    for veh in world.npcs:
        if veh.static:
            continue
        _extend_path(world, veh)
        lane = veh.lane
        nxt = veh.path[veh.k + 1]
        half = veh.length / 2
        rem = geo.length[lane] - veh.s          # centre to end of lane
        v = veh.v
        v_cap = veh.cruise
        if geo.slow[lane]:
            v_cap = min(v_cap, TURN_SPEED)
        if geo.slow[nxt]:
            v_cap = min(v_cap, math.sqrt(TURN_SPEED ** 2 + 2 * COMFORT_DECEL * max(rem - half, 0.0)))
        stop_at = math.inf
        if nxt in geo.gated:
            dist = rem - half - 0.5
            if veh.grant == nxt or (dist < GRANT_RANGE and _first_in_queue(occ, lane, veh.s, veh.id)):
                arm = mg.lanes[nxt].entry_arm
                if _try_grant(world, nxt, veh.id, arm, dist, v, occ, rem):
                    veh.grant = nxt
                else:
                    veh.grant = None
                    stop_at = dist
        elif _ring_blocked(world, nxt, veh.id, occ):
            stop_at = rem - half - 0.5
        gap, lead_v = _npc_leader(world, veh, occ)
        if gap < math.inf:
            stop_at = min(stop_at, gap - MIN_GAP)
            if gap < STOP_GAP:
                v_cap = 0.0
            elif gap < FOLLOW_GAP:
                v_cap = min(v_cap, lead_v)
        v_t = v_cap
        if stop_at < math.inf:
            v_t = min(v_t, math.sqrt(2 * COMFORT_DECEL * max(stop_at, 0.0)))
        a = min(max(2.0 * (v_t - v), -NPC_DECEL), NPC_ACCEL)
        v = max(v + a * dt, 0.0)
        ds = v * dt
        if ds > stop_at:
            ds = max(stop_at, 0.0)
            v = ds / dt
        veh.v = v
        veh.s += ds
        while veh.s > geo.length[veh.lane]:
            veh.s -= geo.length[veh.lane]
            veh.k += 1
        if veh.k > 8:
            del veh.path[:veh.k]
            veh.k = 0
        _place(geo, veh)


# ---------------------------------------------------------------- pedestrians
def _step_pedestrians(world, dt):
    if not world.peds:
        return
    axes = _axes_for(world.map.town)
    draws = world.rng.random(len(world.peds))
    for ped, u in zip(world.peds, draws):
        if ped.crossing is not None:
            start, end, prog, total, target = ped.crossing
            prog += ped.speed * dt
            if prog >= total:
                ped.walk, ped.crossing = target, None
            else:
                ped.crossing = (start, end, prog, total, target)
            _place_ped(world, ped)
            continue
        _, _, long = axes[ped.walk]
        ped.t += ped.dir * ped.speed * dt
        if ped.t < 1.0 or ped.t > long - 1.0:
            ped.dir = -ped.dir
            ped.t = min(max(ped.t, 1.0), long - 1.0)
        if u < PED_CROSS_RATE and PED_CROSS_MARGIN <= ped.t <= long - PED_CROSS_MARGIN:
            _maybe_cross(world, ped, axes)
        _place_ped(world, ped)


def _maybe_cross(world, ped, axes):
    target = ped.walk ^ 1          # sidewalks come in pairs, one per road side
    (ox, oy), (ax, ay), _ = axes[ped.walk]
    (tx, ty), _, _ = axes[target]
    start = (ox + ax * ped.t, oy + ay * ped.t)
    end = (tx + ax * ped.t, ty + ay * ped.t)
    mid = (0.5 * (start[0] + end[0]), 0.5 * (start[1] + end[1]))
    for a in (world.ego, *world.npcs):
        if math.hypot(a.x - mid[0], a.y - mid[1]) < PED_CROSS_CLEARANCE:
            return
    total = math.hypot(end[0] - start[0], end[1] - start[1])
    ped.crossing = (start, end, 0.0, total, target)


# ---------------------------------------------------------------- ego status
def _project_route(world, p, hint):
    route = world.route
    if hint is None:
        s, lat, seg, dist = route.project(p)
    else:
        s, lat, seg, dist = route.project(p, hint)
        if dist > OFF_MAP / 2:
            s, lat, seg, dist = route.project(p)
    return s, lat, seg, dist


def _agents_along_route(world, st, rng_m, arrays=None):
    """Nearest agent ahead along the route: (gap, speed) for the narrow and the planner corridor."""
    agents = world.agents()
    if not agents:
        return (math.inf, 0.0), (math.inf, 0.0)
    ego = world.ego
    pos = np.array([(a.x, a.y) for a in agents])
    near = np.hypot(pos[:, 0] - ego.x, pos[:, 1] - ego.y) < rng_m + 10.0
    if not near.any():
        return (math.inf, 0.0), (math.inf, 0.0)
    idx = np.flatnonzero(near)
    route = world.route
    i0 = max(st.route_idx - 2, 0)
    i1 = min(st.route_idx + int(rng_m / 2) + 4, len(route.xy) - 1)
    a = route.xy[i0:i1]
    b = route.xy[i0 + 1:i1 + 1]
    if len(a) == 0:
        return (math.inf, 0.0), (math.inf, 0.0)
    ab = b - a
    L2 = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-12)
    P = pos[idx]
    ap = P[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("kij,ij->ki", ap, ab) / L2, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    d2 = np.sum((P[:, None, :] - closest) ** 2, axis=2)
    seg = np.argmin(d2, axis=1)
    r = np.arange(len(idx))
    s_other = route.cum[i0 + seg] + t[r, seg] * np.sqrt(L2[seg])
    lat = np.sqrt(d2[r, seg])
    narrow, wide = (math.inf, 0.0), (math.inf, 0.0)
    for j, k in enumerate(idx):
        ag = agents[k]
        ahead = s_other[j] - st.route_s
        if ahead <= 0.0:
            continue
        gap = ahead - (ego.length + ag.length) / 2
        h = route.headings[i0 + seg[j]]
        v_along = max(ag.v * math.cos(ag.theta - h), 0.0)
        if lat[j] <= 0.5 * LANE_WIDTH and ahead <= LEADER_RANGE and gap < narrow[0]:
            narrow = (gap, v_along)
        if ag.kind == "car":
            limit = 0.5 * LANE_WIDTH + 0.4
        else:
            limit = 1.5 * LANE_WIDTH + 0.2 if ag.crossing is not None else 0.5 * LANE_WIDTH
        if lat[j] <= limit and ahead <= PLANNER_RANGE and gap < wide[0]:
            wide = (gap, v_along)
    return narrow, wide


def _ego_status(world, prev, prev_s) -> EgoStatus:
    ego, route = world.ego, world.route
    st = EgoStatus(step=world.step_count, x=ego.x, y=ego.y, theta=ego.theta, v=ego.v)
    hint = prev.route_idx if prev is not None else None
    s, lat, seg, dist = _project_route(world, (ego.x, ego.y), hint)
    if dist > OFF_MAP:
        st.off_map = True
        st.route_s, st.route_idx = (prev.route_s, prev.route_idx) if prev else (0.0, 0)
        st.lateral = math.copysign(dist, lat)
    else:
        st.route_s, st.route_idx, st.lateral = s, seg, lat
        st.heading_error = float(wrap_angle(ego.theta - route.headings[seg]))
    st.option = int(route.options[min(st.route_idx + (1 if st.route_s - route.cum[st.route_idx] > 1.0 else 0),
                                      len(route.options) - 1)])
    s = st.route_s
    st.goal_reached = s >= route.length - 2.0
    # junction, signal and right of way
    ev = route.next_stop(s, include_inside=True)
    if ev is not None:
        st.in_junction = ev.s <= s < ev.s_exit
        if ev.signalized and ev.s - s <= LIGHT_LOOKAHEAD:
            light = world.light_for(ev.junction, ev.arm)
            st.light, st.light_remaining = light.phase, light.remaining
            st.stop_dist = ev.s - s
    if prev is not None and world.lights:
        for e in route.stops:
            if e.signalized and prev_s < e.s <= s:
                if world.light_for(e.junction, e.arm).phase == "red":
                    st.crossed_red = True
    _ego_right_of_way(world, st, ev)
    # agents ahead
    (st.leader_gap, st.leader_v), (st.planner_gap, st.planner_v) = _agents_along_route(world, st, PLANNER_RANGE)
    # contacts
    _ego_contacts(world, st)
    if world.map.sidewalks.size:
        st.sidewalk = bool(obb_intersects_aabbs(ego.box(), world.map.sidewalks).any())
    return st


def _ego_right_of_way(world, st, ev):
    route, s = world.route, st.route_s
    # release grants the ego no longer needs
    for conn, owner in list(world.grants.items()):
        if owner == -1 and not any(e.connector == conn and e.s - GRANT_RANGE - 5.0 <= s <= e.s_gate_end + 5.0
                                   for e in route.stops):
            del world.grants[conn]
    if st.off_map:
        return
    occ = None
    if ev is not None and s < ev.s and ev.s - s <= GRANT_RANGE + 5.0:
        occ = _occupancy(world, st)
        dist = ev.s - 3.0 - s
        lane, lane_s = route.lane_position(s)
        if world.grants.get(ev.connector) != -1 and not _first_in_queue(occ, lane, lane_s, -1):
            st.hold_s = ev.s - 3.0
        elif not _try_grant(world, ev.connector, -1, ev.arm, dist, world.ego.v, occ, ev.s - s):
            st.hold_s = ev.s - 3.0
    elif ev is not None and ev.s <= s < ev.s_gate_end + 5.0 and world.grants.get(ev.connector) is None:
        world.grants[ev.connector] = -1      # the ego is in the box: nobody else may cross its path
    # roundabout ring: yield to vehicles that hold an entry further round
    k = route.span_index(s)
    for j in (k + 1, k + 2):
        if j >= len(route.lane_spans):
            break
        lane, a, _ = route.lane_spans[j]
        if a - s > 25.0:
            break
        if lane in world.geo.ring_yield and route.lane_spans[j - 1][0] not in world.geo.gated:
            occ = occ or _occupancy(world, st)
            if _ring_blocked(world, lane, -1, occ):
                st.hold_s = min(st.hold_s, a - 3.0)
                break


def _ego_contacts(world, st):
    ego = world.ego
    box = ego.box()
    best, kind = None, None
    touching = set()
    vx, vy = ego.v * math.cos(ego.theta), ego.v * math.sin(ego.theta)
    for ag in world.agents():
        if abs(ag.x - ego.x) > 6.0 or abs(ag.y - ego.y) > 6.0:
            continue
        n = contact_normal(box, ag.box())
        if n is None:
            continue
        ident = (ag.kind, ag.id)
        touching.add(ident)
        rel = (vx - ag.v * math.cos(ag.theta)) * n[0] + (vy - ag.v * math.sin(ag.theta)) * n[1]
        intensity = abs(float(rel))
        if best is None or intensity > best:
            best, kind = intensity, ag.kind
        if ident not in world.contacts:
            st.new_collision = True
    world.contacts = touching
    st.collision, st.collision_kind = best, kind


def contact_normal(box_a, box_b):
    """Least-penetration axis of two touching boxes, independent of argument order (None if apart)."""
    if tuple(box_b) < tuple(box_a):
        box_a, box_b = box_b, box_a
    return obb_overlap(box_a, box_b)


def collision_intensity(a: AgentState, b: AgentState) -> float | None:
    """Closing speed along the contact normal, or None when the boxes do not touch."""
    n = contact_normal(a.box(), b.box())
    if n is None:
        return None
    dvx = a.v * math.cos(a.theta) - b.v * math.cos(b.theta)
    dvy = a.v * math.sin(a.theta) - b.v * math.sin(b.theta)
    return abs(float(dvx * n[0] + dvy * n[1]))


def lateral_distance(world_or_route, pose) -> float:
    """Signed distance (m) from the ego route centreline, right positive; raises OffMapError past 20 m."""
    route = world_or_route.route if isinstance(world_or_route, WorldState) else world_or_route
    _, lat, _, dist = route.project(pose[:2])
    if dist > OFF_MAP:
        raise OffMapError(f"no route centreline within {OFF_MAP:.0f} m of ({pose[0]:.1f}, {pose[1]:.1f})")
    return lat


def ego_corners(world) -> np.ndarray:
    e = world.ego
    return box_corners(e.x, e.y, e.theta, e.length, e.width)


def snapshot(world: WorldState) -> tuple:
    """Hashable summary of every moving part (used by determinism checks)."""
    e = world.ego
    parts = [world.step_count, e.x, e.y, e.theta, e.v]
    for veh in world.npcs:
        parts += [veh.x, veh.y, veh.theta, veh.v]
    for ped in world.peds:
        parts += [ped.x, ped.y]
    for light in world.lights:
        parts += [light.phase, light.timer]
    return tuple(parts)
