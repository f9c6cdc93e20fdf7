"""Driving task definitions and their instantiation as simulator worlds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..sim import routing
from ..sim.town import LAYOUTS, build_town
from ..sim.world import WorldState, add_static_vehicle, make_world, spawn_traffic

TASK_NAMES = ("straight", "one_turn", "roundabout", "obstacle_ahead", "cross_intersection", "corl_navigation",
              "corl_nav_dynamic", "nocrash_empty", "nocrash_regular", "nocrash_dense", "composite")

STEPS_PER_METRE = 6 / (10 / 3.6)       # time limit at 10 km/h, 6 ticks per second
OBSTACLE_DISTANCE = 50.0
OBSTACLE_GAP = (2.0, 10.0)


@dataclass(frozen=True)
class TaskSpec:
    name: str
    town: str
    length: float                   # route metres (approximate for random routes until built)
    vehicles: int = 0
    pedestrians: int = 0
    step_limit: int | None = None   # None: derived from the route length
    goal_directed: bool = True
    random_route: bool = False
    min_turns: int = 0

    def limit_for(self, route_length: float) -> int:
        if self.step_limit is not None:
            return self.step_limit
        return int(math.ceil(route_length * STEPS_PER_METRE - 1e-9))


def make_task(name: str, town: str = "A") -> TaskSpec:
    if name not in TASK_NAMES:
        raise ValueError(f"unknown task {name!r}; choose from {', '.join(TASK_NAMES)}")
    build_town(town)
    nav = dict(length=800.0, random_route=True, min_turns=2)
    table = {
        "straight": dict(length=400.0),
        "one_turn": dict(length=400.0),
        "roundabout": dict(length=0.0),
        "obstacle_ahead": dict(length=400.0, step_limit=360, goal_directed=False),
        "cross_intersection": dict(length=500.0),
        "corl_navigation": nav,
        "corl_nav_dynamic": dict(nav, vehicles=10, pedestrians=15),
        "nocrash_empty": nav,
        "nocrash_regular": dict(nav, vehicles=8, pedestrians=12),
        "nocrash_dense": dict(nav, vehicles=20, pedestrians=30),
        "composite": dict(length=7000.0, random_route=True, vehicles=8, pedestrians=12, step_limit=4000,
                          goal_directed=False),
    }
    return TaskSpec(name=name, town=town, **table[name])


def task_route(task: TaskSpec, rng: np.random.Generator) -> routing.Route:
    mg = build_town(task.town)
    lay = LAYOUTS[task.town]
    name = task.name
    if name in ("straight", "obstacle_ahead"):
        lane, s0 = mg.named["straight"]
        return routing.route_along(mg, [lane], s0, task.length)
    if name == "one_turn":
        a, b, _ = lay.one_turn
        lane = mg.road_lanes[(a, b)]
        s0 = mg.lanes[lane].length - 220.0
        seq = routing.follow_maneuvers(mg, lane, ["left"], task.length, s0=s0)
        return routing.route_along(mg, seq, s0, task.length)
    if name == "roundabout":
        ring = next(j for j in mg.junctions if j.kind == "roundabout")
        lane_in = next(l for l, arm in ring.entries.items() if arm == lay.roundabout_entry)
        seq = routing.roundabout_lanes(mg, lane_in, exits_to_skip=2)
        s0 = max(mg.lanes[lane_in].length - 120.0, 0.0)
        through = sum(mg.lanes[l].length for l in seq[:-1]) - s0
        length = 2.0 * math.floor((through + min(120.0, mg.lanes[seq[-1]].length - 10.0)) / 2.0)
        return routing.route_along(mg, seq, s0, length)
    if name == "cross_intersection":
        jn = mg.junction_at(lay.cross)
        lane = next(l for l, arm in jn.entries.items() if arm == lay.cross_from)
        s0 = max(mg.lanes[lane].length - 200.0, 0.0)
        seq = routing.follow_maneuvers(mg, lane, ["straight"], task.length, s0=s0)
        return routing.route_along(mg, seq, s0, task.length)
    for _ in range(200):
        start = mg.spawn_points[int(rng.integers(len(mg.spawn_points)))]
        route = routing.random_route(mg, start, task.length, rng, min_turns=task.min_turns)
        if route.turns() >= task.min_turns:
            return route
    raise routing.RouteError(f"no {task.length:.0f} m route with {task.min_turns} turns found")


def instantiate(task: TaskSpec, weather: str, seed: int) -> tuple[WorldState, int]:
    """Fresh world for one episode of ``task`` plus its step limit."""
    rng = np.random.default_rng([seed, 0x7A5C])
    route = task_route(task, rng)
    world = make_world(task.town, route, weather, seed=seed)
    if task.name == "obstacle_ahead":
        lane, s = route.lane_position(OBSTACLE_DISTANCE)
        add_static_vehicle(world, lane, s)
    if task.vehicles or task.pedestrians:
        spawn_traffic(world, task.vehicles, task.pedestrians, seed=int(rng.integers(2 ** 31)))
    return world, task.limit_for(route.length)
