"""Privileged scripted driver: pure-pursuit steering plus a stopping-distance speed law."""

from __future__ import annotations

import math

import numpy as np

from ..reward import speed_targets
from ..sim.world import BRAKE_GAIN, COMFORT_DECEL, DRAG, MAX_STEER, THROTTLE_GAIN, WHEELBASE, WorldState

CRUISE = 8.0
TURN_SPEED = 4.5
DECEL = 3.0
STOP_BUFFER = 3.0      # ego centre waits this far before a stop line
FOLLOW_GAP = 3.0       # bumper gap held behind a stopped leader


def pure_pursuit(world: WorldState, lookahead: float | None = None) -> float:
    """Normalised steering command towards the route point ``lookahead`` metres ahead."""
    ego, st, route = world.ego, world.status, world.route
    ld = lookahead if lookahead is not None else max(4.0, 0.6 * ego.v + 3.0)
    target, _ = route.point_at(st.route_s + ld)
    dx, dy = target[0] - ego.x, target[1] - ego.y
    alpha = math.atan2(dy, dx) - ego.theta
    dist = max(math.hypot(dx, dy), 1e-3)
    delta = math.atan2(2.0 * WHEELBASE * math.sin(alpha), dist)
    return max(-1.0, min(1.0, delta / MAX_STEER))


def _curve_speed(world: WorldState, horizon: float = 25.0) -> float:
    """Speed cap from the sharpest heading change in the next ``horizon`` metres."""
    st, route = world.status, world.route
    i0 = st.route_idx
    i1 = min(i0 + int(horizon / 2) + 1, len(route.headings) - 1)
    if i1 - i0 < 2:
        return CRUISE
    h = route.headings[i0:i1 + 1]
    turn = np.abs(np.diff(np.unwrap(h)))
    if turn.max() < 0.05:
        return CRUISE
    first = int(np.argmax(turn > 0.05))
    dist = max(route.cum[i0 + first] - st.route_s, 0.0)
    return math.sqrt(TURN_SPEED ** 2 + 2 * DECEL * dist)


def target_speed(world: WorldState) -> tuple[float, float]:
    """(cruise target, metres until the ego centre must be stopped)."""
    st = world.status
    # never above the reward's own target: zero on red in the stop zone or close behind a leader
    v_t = min(CRUISE, _curve_speed(world), speed_targets(st))
    stop = math.inf
    if st.hold_s < math.inf:
        stop = st.hold_s - st.route_s
    if st.light in ("red", "yellow") and st.stop_dist > 0:
        room = st.stop_dist - STOP_BUFFER
        can_stop = st.v * st.v / (2 * COMFORT_DECEL) <= room
        if st.light == "red" or can_stop:
            stop = min(stop, room)
    if st.planner_gap < math.inf:
        stop = min(stop, st.planner_gap - FOLLOW_GAP)
        if st.planner_gap < 10.0:
            v_t = min(v_t, st.planner_v)
    stop = min(stop, world.route.length - st.route_s - 0.5)
    return v_t, stop


def speed_command(world: WorldState, v_t: float, stop: float) -> tuple[float, float]:
    """Throttle/brake that track ``v_t`` while staying able to stop within ``stop`` metres."""
    ego = world.ego
    v = ego.v
    mu = world.weather.friction
    if stop < math.inf:
        v_t = min(v_t, math.sqrt(2 * DECEL * max(stop, 0.0)))
        if stop <= 0.2:
            v_t = 0.0
    a_des = 1.5 * (v_t - v)
    # brake harder when the remaining distance demands it
    if stop < math.inf and v > 0.05:
        need = v * v / (2 * max(stop, 0.05))
        if need > DECEL * 0.8:
            a_des = min(a_des, -1.2 * need)
    force = a_des + DRAG * v
    if v_t <= 0.0 and v < 0.3:
        return 0.0, 1.0
    if force >= 0:
        return min(force / (THROTTLE_GAIN * mu), 1.0), 0.0
    return 0.0, min(-force / (BRAKE_GAIN * mu), 1.0)


def scripted_autopilot(world: WorldState) -> tuple[float, float, float]:
    """Action (steer, throttle, brake) of the privileged rule-following driver."""
    steer = pure_pursuit(world)
    v_t, stop = target_speed(world)
    throttle, brake = speed_command(world, v_t, stop)
    return steer, throttle, brake
