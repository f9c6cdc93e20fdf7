"""Grid-town road networks.

A town is a rectangular grid of nodes joined by two-way roads (one 3.5 m lane
per direction, right-hand traffic). Corner nodes are plain bends, border nodes
are T-junctions, and interior nodes are either crossings or four-arm
roundabouts. Crossings and T-junctions carry two-group traffic lights. All roads are axis-aligned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import (arc_points, bezier_points, cumulative, polyline_length, resample, right_normal, unit,
                       wrap_angle)

LANE_WIDTH = 3.5
WAYPOINT_SPACING = 2.0
SHOULDER = 0.5
SIDEWALK_WIDTH = 3.0

NODE_RADIUS = {"bend": 20.0, "tee": 10.0, "cross": 10.0, "roundabout": 35.0}
RING_RADIUS = 20.0
RING_MERGE_OFFSET = np.deg2rad(30.0)

# arm directions
ARMS = {"E": 0.0, "N": np.pi / 2, "W": np.pi, "S": -np.pi / 2}
ARM_ORDER_CCW = ["E", "N", "W", "S"]

OPTIONS = ("follow", "left", "right", "straight")


@dataclass
class Lane:
    id: int
    kind: str                     # road | connector | ring
    points: np.ndarray            # dense polyline (M, 2)
    node: int | None = None       # junction id for connectors / ring pieces
    maneuver: str = "follow"      # for connectors: left/right/straight; bends: follow
    successors: list[int] = field(default_factory=list)
    road: tuple | None = None     # (from_node, to_node) for road lanes
    entry_arm: str | None = None
    exit_arm: str | None = None

    def __post_init__(self):
        self.cum = cumulative(self.points)
        self.length = float(self.cum[-1])

    @property
    def heading_start(self) -> float:
        d = self.points[1] - self.points[0]
        return float(np.arctan2(d[1], d[0]))

    @property
    def heading_end(self) -> float:
        d = self.points[-1] - self.points[-2]
        return float(np.arctan2(d[1], d[0]))

    def waypoints(self) -> np.ndarray:
        return resample(self.points, WAYPOINT_SPACING)


@dataclass
class Junction:
    id: int
    kind: str                      # bend | tee | cross | roundabout
    center: np.ndarray
    grid: tuple[int, int]
    arms: list[str]
    radius: float
    signalized: bool = False
    # connector lane ids (or ring entry lanes) whose start is a stop line
    entries: dict[int, str] = field(default_factory=dict)  # incoming road lane id -> arm
    conflicts: dict[int, set] = field(default_factory=dict)  # connector id -> conflicting connector/ring ids

    @property
    def is_junction(self) -> bool:
        """Bends are geometry only; everything else carries road options and stop lines."""
        return self.kind != "bend"

    def light_group(self, arm: str) -> int:
        return 0 if arm in ("E", "W") else 1


@dataclass
class MapGraph:
    town: str
    lanes: list[Lane]
    junctions: list[Junction]
    sidewalks: np.ndarray                   # (K, 4) xmin, ymin, xmax, ymax
    sidewalk_road: list[tuple[int, int]]    # road lane pair served by each sidewalk strip
    road_lanes: dict[tuple, int]            # (from_grid, to_grid) -> lane id
    spawn_points: list[tuple[int, float]]   # (lane id, s)
    ped_spawn_points: list[tuple[int, float]]  # (sidewalk index, t along its long axis)
    named: dict[str, tuple[int, float]]
    lane_width: float = LANE_WIDTH

    def lane(self, lane_id: int) -> Lane:
        return self.lanes[lane_id]

    def road_lane(self, a: tuple[int, int], b: tuple[int, int]) -> Lane:
        return self.lanes[self.road_lanes[(a, b)]]

    def junction_at(self, grid: tuple[int, int]) -> Junction:
        for j in self.junctions:
            if j.grid == grid:
                return j
        raise KeyError(grid)

    def predecessors(self) -> dict[int, list[int]]:
        pred: dict[int, list[int]] = {l.id: [] for l in self.lanes}
        for l in self.lanes:
            for s in l.successors:
                pred[s].append(l.id)
        return pred

    def geometry_dump(self) -> str:
        """Plain-text dump: one lane per line, ``id kind option x,y x,y ...`` at 2 m spacing."""
        rows = []
        for l in self.lanes:
            pts = " ".join(f"{x:.3f},{y:.3f}" for x, y in l.waypoints())
            rows.append(f"{l.id} {l.kind} {l.maneuver} {pts}")
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class TownLayout:
    xs: tuple[float, ...]
    ys: tuple[float, ...]
    roundabouts: tuple[tuple[int, int], ...]
    straight: tuple[tuple[int, int], tuple[int, int]]
    one_turn: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]
    roundabout_entry: str
    cross: tuple[int, int]
    cross_from: str


LAYOUTS = {
    "A": TownLayout(xs=(0.0, 400.0, 800.0, 1200.0), ys=(0.0, 600.0, 1200.0),
                    roundabouts=((2, 1),), straight=((0, 0), (0, 1)),
                    one_turn=((0, 0), (1, 0), (1, 1)), roundabout_entry="S",
                    cross=(1, 1), cross_from="S"),
    "B": TownLayout(xs=(0.0, 550.0, 1100.0), ys=(0.0, 450.0, 1000.0, 1550.0),
                    roundabouts=((1, 2),), straight=((0, 0), (1, 0)),
                    one_turn=((0, 0), (1, 0), (1, 1)), roundabout_entry="S",
                    cross=(1, 1), cross_from="W"),
}


def _arm_between(a: tuple[int, int], b: tuple[int, int]) -> str:
    dx, dy = b[0] - a[0], b[1] - a[1]
    return {(1, 0): "E", (-1, 0): "W", (0, 1): "N", (0, -1): "S"}[(int(np.sign(dx)), int(np.sign(dy)))]


def _maneuver(h_in: float, h_out: float) -> str:
    d = float(wrap_angle(h_out - h_in))
    if abs(d) < np.deg2rad(30):
        return "straight"
    return "left" if d > 0 else "right"


def _turn_connector(p0, h0, p1, h1) -> np.ndarray:
    """Quarter-circle (or straight) path between two lane ends meeting at a right angle."""
    d = float(wrap_angle(h1 - h0))
    if abs(d) < 1e-6:
        return np.vstack([p0, p1])
    u0 = unit(h0)
    nrm = np.array([-u0[1], u0[0]]) if d > 0 else right_normal(u0)
    radius = abs((p1 - p0) @ nrm)
    center = p0 + radius * nrm
    a0 = np.arctan2(*(p0 - center)[::-1])
    a1 = a0 + d
    return arc_points(center, radius, a0, a1)


def _conflict(a: np.ndarray, b: np.ndarray, tol: float = 3.0) -> bool:
    pa = resample(a, 0.5)
    pb = resample(b, 0.5)
    d = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
    return bool(d.min() < tol)


def _build(town: str) -> MapGraph:
    lay = LAYOUTS[town]
    nx, ny = len(lay.xs), len(lay.ys)
    lanes: list[Lane] = []
    junctions: list[Junction] = []
    jid: dict[tuple[int, int], int] = {}

    def add_lane(**kw) -> Lane:
        lane = Lane(id=len(lanes), **kw)
        lanes.append(lane)
        return lane

    def neighbours(g):
        i, j = g
        out = []
        for di, dj in ((1, 0), (0, 1), (-1, 0), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < nx and 0 <= b < ny:
                out.append((a, b))
        return out

    for j in range(ny):
        for i in range(nx):
            g = (i, j)
            arms = [_arm_between(g, n) for n in neighbours(g)]
            if len(arms) == 2:
                kind = "bend"
            elif len(arms) == 3:
                kind = "tee"
            else:
                kind = "roundabout" if g in lay.roundabouts else "cross"
            jid[g] = len(junctions)
            junctions.append(Junction(id=len(junctions), kind=kind, center=np.array([lay.xs[i], lay.ys[j]]),
                                      grid=g, arms=sorted(arms, key=ARM_ORDER_CCW.index),
                                      radius=NODE_RADIUS[kind], signalized=kind in ("cross", "tee")))

    # road lanes
    road_lanes: dict[tuple, int] = {}
    sidewalks, sidewalk_road = [], []
    for ja in junctions:
        for nb in neighbours(ja.grid):
            jb = junctions[jid[nb]]
            u = (jb.center - ja.center) / np.linalg.norm(jb.center - ja.center)
            off = 0.5 * LANE_WIDTH * right_normal(u)
            p0 = ja.center + ja.radius * u + off
            p1 = jb.center - jb.radius * u + off
            lane = add_lane(kind="road", points=np.vstack([p0, p1]), road=(ja.grid, jb.grid))
            road_lanes[(ja.grid, jb.grid)] = lane.id
            if ja.grid < jb.grid:
                # one sidewalk strip on each side of the road
                for side in (1.0, -1.0):
                    edge = LANE_WIDTH + SHOULDER
                    n = right_normal(u) * side
                    q0 = ja.center + ja.radius * u + n * edge
                    q1 = jb.center - jb.radius * u + n * (edge + SIDEWALK_WIDTH)
                    sidewalks.append([min(q0[0], q1[0]), min(q0[1], q1[1]), max(q0[0], q1[0]), max(q0[1], q1[1])])
                    sidewalk_road.append((road_lanes.get((ja.grid, jb.grid)), None))

    # fix sidewalk -> road lane pairs once both directions exist
    k = 0
    for ja in junctions:
        for nb in neighbours(ja.grid):
            if ja.grid < nb:
                pair = (road_lanes[(ja.grid, nb)], road_lanes[(nb, ja.grid)])
                sidewalk_road[k] = pair
                sidewalk_road[k + 1] = pair
                k += 2

    incoming: dict[int, dict[str, Lane]] = {j.id: {} for j in junctions}
    outgoing: dict[int, dict[str, Lane]] = {j.id: {} for j in junctions}
    for key, lid in road_lanes.items():
        a, b = key
        lane = lanes[lid]
        outgoing[jid[a]][_arm_between(a, b)] = lane
        incoming[jid[b]][_arm_between(b, a)] = lane

    for jn in junctions:
        if jn.kind == "roundabout":
            _build_roundabout(jn, incoming[jn.id], outgoing[jn.id], add_lane)
            continue
        conns = []
        for arm_in, lin in incoming[jn.id].items():
            for arm_out, lout in outgoing[jn.id].items():
                if arm_in == arm_out:
                    continue
                pts = _turn_connector(lin.points[-1], lin.heading_end, lout.points[0], lout.heading_start)
                man = _maneuver(lin.heading_end, lout.heading_start)
                c = add_lane(kind="connector", points=pts, node=jn.id,
                             maneuver=man if jn.is_junction else "follow", entry_arm=arm_in, exit_arm=arm_out)
                c.successors.append(lout.id)
                lin.successors.append(c.id)
                conns.append(c)
            if jn.is_junction:
                jn.entries[lin.id] = arm_in
        if jn.is_junction:
            for c in conns:
                jn.conflicts[c.id] = {o.id for o in conns
                                      if o.id != c.id and o.entry_arm != c.entry_arm and _conflict(c.points, o.points)}

    for lane in lanes:
        if lane.kind == "road":
            lane.successors.sort()

    spawn_points = []
    for lid in sorted(road_lanes.values()):
        lane = lanes[lid]
        s = 20.0
        while s <= lane.length - 30.0:
            spawn_points.append((lid, s))
            s += 20.0
    ped_spawn = []
    for k, r in enumerate(sidewalks):
        long = max(r[2] - r[0], r[3] - r[1])
        t = 5.0
        while t <= long - 5.0:
            ped_spawn.append((k, t))
            t += 10.0

    mg = MapGraph(town=town, lanes=lanes, junctions=junctions, sidewalks=np.array(sidewalks, float),
                  sidewalk_road=sidewalk_road, road_lanes=road_lanes, spawn_points=spawn_points,
                  ped_spawn_points=ped_spawn, named={})
    straight_lane = mg.road_lane(*lay.straight)
    mg.named["straight"] = (straight_lane.id, 20.0)
    return mg


def _build_roundabout(jn: Junction, incoming: dict, outgoing: dict, add_lane) -> None:
    """Single-lane counter-clockwise ring with merge/diverge points either side of each arm."""
    c = jn.center
    arms = ARM_ORDER_CCW
    phi = {a: ARMS[a] for a in arms}
    delta = RING_MERGE_OFFSET

    def ring_pt(angle):
        return c + RING_RADIUS * unit(angle)

    def tangent(angle):
        return angle + np.pi / 2

    ring_lanes = {}
    for k, a in enumerate(arms):
        nxt = arms[(k + 1) % 4]
        a_merge = phi[a] + delta
        a_div_next = phi[nxt] - delta
        if a_div_next < a_merge:
            a_div_next += 2 * np.pi
        # merge(a) -> diverge(next)
        ring_lanes[("md", a)] = add_lane(kind="ring", points=arc_points(c, RING_RADIUS, a_merge, a_div_next),
                                         node=jn.id)
        # diverge(a) -> merge(a)
        ring_lanes[("dm", a)] = add_lane(kind="ring", points=arc_points(c, RING_RADIUS, phi[a] - delta, a_merge),
                                         node=jn.id)
    for k, a in enumerate(arms):
        nxt = arms[(k + 1) % 4]
        ring_lanes[("md", a)].successors.append(ring_lanes[("dm", nxt)].id)
        ring_lanes[("dm", a)].successors.append(ring_lanes[("md", a)].id)

    for a in arms:
        lin = incoming[a]
        p0, h0 = lin.points[-1], lin.heading_end
        p3 = ring_pt(phi[a] + delta)
        h3 = tangent(phi[a] + delta)
        k = 0.45 * np.linalg.norm(p3 - p0)
        entry = add_lane(kind="connector", points=bezier_points(p0, p0 + k * unit(h0), p3 - k * unit(h3), p3),
                         node=jn.id, maneuver="follow", entry_arm=a)
        entry.successors.append(ring_lanes[("md", a)].id)
        lin.successors.append(entry.id)
        jn.entries[lin.id] = a

        lout = outgoing[a]
        q0 = ring_pt(phi[a] - delta)
        g0 = tangent(phi[a] - delta)
        q3, g3 = lout.points[0], lout.heading_start
        k = 0.45 * np.linalg.norm(q3 - q0)
        ex = add_lane(kind="connector", points=bezier_points(q0, q0 + k * unit(g0), q3 - k * unit(g3), q3),
                      node=jn.id, maneuver="follow", exit_arm=a)
        ex.successors.append(lout.id)
        ring_lanes[("md", _prev_arm(a))].successors.append(ex.id)
        ring_lanes[("md", _prev_arm(a))].successors.sort()
        jn.conflicts[entry.id] = {ring_lanes[("dm", a)].id, ring_lanes[("md", _prev_arm(a))].id}


def _prev_arm(a: str) -> str:
    return ARM_ORDER_CCW[(ARM_ORDER_CCW.index(a) - 1) % 4]


@lru_cache(maxsize=None)
def build_town(town: str) -> MapGraph:
    """Build (and memoise) the road network for town ``"A"`` (train) or ``"B"`` (test)."""
    if town not in LAYOUTS:
        raise ValueError(f"unknown town {town!r}; expected one of {sorted(LAYOUTS)}")
    return _build(town)


def sidewalk_axis(rect) -> tuple[np.ndarray, np.ndarray]:
    """Start point and unit direction of a sidewalk strip's long centre line."""
    xmin, ymin, xmax, ymax = rect
    if xmax - xmin >= ymax - ymin:
        y = 0.5 * (ymin + ymax)
        return np.array([xmin, y]), np.array([1.0, 0.0])
    x = 0.5 * (xmin + xmax)
    return np.array([x, ymin]), np.array([0.0, 1.0])


def lane_length(pts: np.ndarray) -> float:
    return polyline_length(pts)
