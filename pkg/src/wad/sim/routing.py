"""Routes over the lane graph: shortest paths, random walks, road-option labels."""

from __future__ import annotations

import heapq
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .geometry import cumulative, project_onto_polyline, resample, wrap_angle
from .town import OPTIONS, WAYPOINT_SPACING, MapGraph

OPTION_LOOKAHEAD = 20.0


class RouteError(ValueError):
    pass


class OffMapError(RouteError):
    pass


@dataclass
class StopEvent:
    s: float                 # arc length of the stop line (junction entry) on the route
    s_exit: float            # arc length where the route leaves the junction
    junction: int
    arm: str
    connector: int           # first lane inside the junction
    signalized: bool
    maneuver: str
    s_gate_end: float = 0.0  # arc length where the first junction lane (the gated one) ends


@dataclass
class Route:
    xy: np.ndarray                    # waypoints (M, 2), 2 m apart
    cum: np.ndarray                   # arc length at each waypoint
    options: np.ndarray               # int codes into OPTIONS per waypoint
    lane_spans: list[tuple[int, float, float]]   # (lane id, s_start, s_end)
    stops: list[StopEvent] = field(default_factory=list)
    span_offsets: list[float] = field(default_factory=list)  # route s minus lane s, per span
    headings: np.ndarray = None

    def __post_init__(self):
        self._span_starts = [a for _, a, _ in self.lane_spans]
        d = np.diff(self.xy, axis=0)
        h = np.arctan2(d[:, 1], d[:, 0])
        self.headings = np.append(h, h[-1]) if len(h) else np.zeros(1)

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    @property
    def option_names(self) -> list[str]:
        return [OPTIONS[i] for i in self.options]

    def lane_at(self, s: float) -> int:
        return self.lane_spans[self.span_index(s)][0]

    def span_index(self, s: float) -> int:
        return max(0, bisect_right(self._span_starts, s) - 1)

    def lane_position(self, s: float) -> tuple[int, float]:
        """``(lane id, s along that lane)`` for route arc length ``s``."""
        k = self.span_index(s)
        return self.lane_spans[k][0], s - self.span_offsets[k]

    def point_at(self, s: float) -> tuple[np.ndarray, float]:
        s = float(np.clip(s, 0.0, self.length))
        i = int(min(np.searchsorted(self.cum, s, side="right") - 1, len(self.cum) - 2))
        seg = self.cum[i + 1] - self.cum[i]
        t = (s - self.cum[i]) / seg if seg > 0 else 0.0
        return self.xy[i] + t * (self.xy[i + 1] - self.xy[i]), float(self.headings[i])

    def project(self, p, hint: int | None = None, window: tuple[int, int] = (4, 10)):
        if hint is None:
            return project_onto_polyline(self.xy, self.cum, p)
        return project_onto_polyline(self.xy, self.cum, p, hint - window[0], hint + window[1])

    def next_stop(self, s: float, include_inside: bool = False) -> StopEvent | None:
        for ev in self.stops:
            if ev.s >= s or (include_inside and ev.s_exit > s):
                return ev
        return None

    def junction_span_at(self, s: float) -> StopEvent | None:
        for ev in self.stops:
            if ev.s <= s < ev.s_exit:
                return ev
        return None

    def turns(self) -> int:
        return sum(1 for ev in self.stops if ev.maneuver in ("left", "right") and ev.s_exit <= self.length)


def _lane_sequence_route(mg: MapGraph, lane_ids: list[int], s0: float, length: float) -> Route:
    """Route following ``lane_ids`` starting at ``s0`` on the first lane, truncated at ``length``."""
    pieces = []
    spans = []
    offsets = []
    offset = -s0
    for k, lid in enumerate(lane_ids):
        lane = mg.lanes[lid]
        pts = lane.points
        if k == 0:
            # cut the first lane at s0
            cum = lane.cum
            x = np.interp(s0, cum, pts[:, 0])
            y = np.interp(s0, cum, pts[:, 1])
            keep = cum > s0 + 1e-9
            pts = np.vstack([[x, y], pts[keep]])
        elif pieces:
            pts = pts[1:]
        pieces.append(pts)
        spans.append((lid, max(0.0, offset), offset + lane.length))
        offsets.append(offset)
        offset += lane.length
    dense = np.vstack(pieces)
    total = cumulative(dense)[-1]
    if length > total + 1e-6:
        raise RouteError(f"lane sequence only covers {total:.1f} m < {length:.1f} m")
    xy = resample(dense, WAYPOINT_SPACING, length)
    # arc length of each waypoint on the underlying curve (chords on bends are a few mm shorter)
    nominal = np.minimum(np.arange(len(xy)) * WAYPOINT_SPACING, length)
    keep = [k for k, (_, a, _) in enumerate(spans) if a < length]
    spans = [(spans[k][0], spans[k][1], min(spans[k][2], length)) for k in keep]
    route = Route(xy=xy, cum=nominal,
                  options=np.zeros(len(xy), dtype=np.int8), lane_spans=spans,
                  span_offsets=[offsets[k] for k in keep])
    _label(mg, route)
    return route


def _label(mg: MapGraph, route: Route) -> None:
    """Find junction traversals and label road options within the lookahead window."""
    spans = route.lane_spans
    stops = []
    k = 0
    while k < len(spans):
        lid, a, b = spans[k]
        lane = mg.lanes[lid]
        jn = mg.junctions[lane.node] if lane.node is not None else None
        if lane.kind != "road" and jn is not None and jn.is_junction:
            start = k
            while k + 1 < len(spans) and mg.lanes[spans[k + 1][0]].node == jn.id \
                    and mg.lanes[spans[k + 1][0]].kind != "road":
                k += 1
            first = mg.lanes[spans[start][0]]
            last = mg.lanes[spans[k][0]]
            s_entry, s_exit = spans[start][1], spans[k][2]
            arm = first.entry_arm
            if jn.kind == "roundabout":
                h_in = first.heading_start
                h_out = last.heading_end if last.exit_arm is not None else None
                maneuver = _classify(h_in, h_out) if h_out is not None else "straight"
            else:
                maneuver = first.maneuver
            stops.append(StopEvent(s=s_entry, s_exit=s_exit, junction=jn.id, arm=arm, connector=first.id,
                                   signalized=jn.signalized, maneuver=maneuver, s_gate_end=spans[start][2]))
        k += 1
    route.stops = stops
    s = route.cum
    for ev in stops:
        mask = (s >= ev.s - OPTION_LOOKAHEAD) & (s < ev.s_exit)
        route.options[mask] = OPTIONS.index(ev.maneuver)


def _classify(h_in: float, h_out: float) -> str:
    d = float(wrap_angle(h_out - h_in))
    if abs(d) < np.deg2rad(30):
        return "straight"
    return "left" if d > 0 else "right"


def shortest_lane_path(mg: MapGraph, start_lane: int, goal_lane: int, start_s: float = 0.0,
                       goal_s: float = 0.0) -> list[int]:
    if start_lane == goal_lane and goal_s >= start_s:
        return [start_lane]
    dist = {start_lane: mg.lanes[start_lane].length - start_s}
    prev: dict[int, int] = {}
    heap = [(dist[start_lane], start_lane)]
    while heap:
        d, lid = heapq.heappop(heap)
        if lid == goal_lane and lid != start_lane:
            break
        if d > dist.get(lid, np.inf):
            continue
        for nxt in mg.lanes[lid].successors:
            nd = d + mg.lanes[nxt].length
            if nd < dist.get(nxt, np.inf):
                dist[nxt] = nd
                prev[nxt] = lid
                heapq.heappush(heap, (nd, nxt))
    if goal_lane not in prev:
        raise RouteError(f"goal lane {goal_lane} unreachable from lane {start_lane}")
    path = [goal_lane]
    while path[-1] != start_lane:
        path.append(prev[path[-1]])
    return path[::-1]


def route(mg: MapGraph, start: tuple[int, float], goal: tuple[int, float]) -> Route:
    """Shortest lane-graph route between two ``(lane id, s)`` points."""
    (l0, s0), (l1, s1) = start, goal
    for lid, s in (start, goal):
        if not 0 <= lid < len(mg.lanes) or not 0 <= s <= mg.lanes[lid].length:
            raise RouteError(f"({lid}, {s}) is not on the lane graph")
    path = shortest_lane_path(mg, l0, l1, s0, s1)
    if len(path) == 1:
        length = s1 - s0
    else:
        length = (mg.lanes[l0].length - s0) + sum(mg.lanes[l].length for l in path[1:-1]) + s1
    return _lane_sequence_route(mg, path, s0, length)


def route_along(mg: MapGraph, lane_ids: list[int], s0: float, length: float) -> Route:
    return _lane_sequence_route(mg, lane_ids, s0, length)


def follow_maneuvers(mg: MapGraph, start_lane: int, maneuvers: list[str], min_length: float,
                     s0: float = 0.0) -> list[int]:
    """Lane sequence from ``start_lane`` taking the given maneuver at each junction."""
    seq = [start_lane]
    todo = list(maneuvers)
    covered = mg.lanes[start_lane].length - s0
    guard = 0
    while covered < min_length or todo:
        guard += 1
        if guard > 500:
            raise RouteError("could not satisfy maneuver list")
        lane = mg.lanes[seq[-1]]
        succ = lane.successors
        if not succ:
            raise RouteError(f"dead end at lane {lane.id}")
        if len(succ) == 1:
            nxt = succ[0]
        else:
            nxt = _choose(mg, lane, succ, todo[0] if todo else "straight")
            if todo and _choice_maneuver(mg, lane, nxt) == todo[0]:
                todo.pop(0)
        seq.append(nxt)
        covered += mg.lanes[nxt].length
    return seq


def _choice_maneuver(mg: MapGraph, lane, nxt: int) -> str:
    nl = mg.lanes[nxt]
    if nl.kind == "connector" and nl.exit_arm is None and nl.entry_arm is not None and nl.maneuver != "follow":
        return nl.maneuver
    if nl.kind == "connector":
        return nl.maneuver
    return "follow"


def _choose(mg: MapGraph, lane, succ: list[int], want: str) -> int:
    # roundabout ring pieces: "exit" vs "continue"
    if lane.kind == "ring":
        exits = [s for s in succ if mg.lanes[s].kind == "connector"]
        ring = [s for s in succ if mg.lanes[s].kind == "ring"]
        return exits[0] if want == "exit" else ring[0]
    for s in succ:
        if mg.lanes[s].maneuver == want:
            return s
    for s in succ:
        if mg.lanes[s].maneuver == "straight":
            return s
    return succ[0]


def roundabout_lanes(mg: MapGraph, entry_road_lane: int, exits_to_skip: int) -> list[int]:
    """Lane ids from the road entering a roundabout through the ring to the chosen exit road.

    ``exits_to_skip`` intermediate exits are passed before leaving.
    """
    seq = [entry_road_lane]
    entry = mg.lanes[entry_road_lane].successors
    if len(entry) != 1 or mg.lanes[entry[0]].kind != "connector":
        raise RouteError("lane does not enter a roundabout")
    seq.append(entry[0])
    seq.append(mg.lanes[entry[0]].successors[0])
    passed = 0
    while True:
        lane = mg.lanes[seq[-1]]
        exits = [s for s in lane.successors if mg.lanes[s].kind == "connector"]
        ring = [s for s in lane.successors if mg.lanes[s].kind == "ring"]
        if exits:
            if passed == exits_to_skip:
                seq.append(exits[0])
                seq.append(mg.lanes[exits[0]].successors[0])
                return seq
            passed += 1
        seq.append(ring[0])


def random_lane_walk(mg: MapGraph, start_lane: int, s0: float, min_length: float, rng: np.random.Generator,
                     min_turns: int = 0, max_tries: int = 50) -> list[int]:
    """Random walk over successors covering at least ``min_length`` metres."""
    for _ in range(max_tries):
        seq = [start_lane]
        covered = mg.lanes[start_lane].length - s0
        turns = 0
        while covered < min_length or turns < min_turns:
            succ = mg.lanes[seq[-1]].successors
            nxt = succ[int(rng.integers(len(succ)))]
            if mg.lanes[nxt].maneuver in ("left", "right"):
                turns += 1
            seq.append(nxt)
            covered += mg.lanes[nxt].length
            if covered > 50 * max(min_length, 1.0):
                break
        if turns >= min_turns:
            return seq
    raise RouteError("random walk failed to satisfy constraints")


def extend_to_road(mg: MapGraph, seq: list[int], s0: float, length: float, margin: float = 10.0) -> float:
    """Smallest even length >= ``length`` whose end lies on a road lane, ``margin`` from either end."""
    offset = -s0
    best = None
    for lid in seq:
        lane = mg.lanes[lid]
        a, b = offset, offset + lane.length
        if lane.kind == "road":
            lo = max(a + margin, length)
            hi = b - margin
            lo = 2.0 * np.ceil(lo / 2.0)
            if lo <= hi:
                best = lo
                break
        offset = b
    if best is None:
        raise RouteError("no road lane to end the route on")
    return float(best)


def lateral_distance(route: Route, pose, hint: int | None = None, limit: float = 20.0) -> float:
    """Signed perpendicular distance (m) from the route centreline; right of travel is positive."""
    _, lat, _, dist = route.project(pose[:2], hint)
    if dist > limit:
        _, lat, _, dist = route.project(pose[:2])
        if dist > limit:
            raise OffMapError(f"no route centreline within {limit} m of ({pose[0]:.1f}, {pose[1]:.1f})")
    return lat


def random_route(mg: MapGraph, start: tuple[int, float], length: float, rng: np.random.Generator,
                 min_turns: int = 0) -> Route:
    """Random walk from ``start`` ending on a road lane at least ``length`` metres away."""
    lane, s0 = start
    seq = random_lane_walk(mg, lane, s0, length + 450.0, rng, min_turns=min_turns)
    end = extend_to_road(mg, seq, s0, length)
    return route_along(mg, seq, s0, end)
