"""Per-tick driving reward and the strict episode termination rules.

Every term is a function of two consecutive ego summaries (``EgoStatus``) plus the
action and a small episode context. ``assess`` is pure: it returns a fresh context
instead of mutating the one passed in.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

from .sim.world import EgoStatus

CAUSES = ("collision", "red_light_jump", "sidewalk", "out_of_lane", "timeout", "goal_reached", "step_limit")
INFRACTIONS = CAUSES[:5]


@dataclass(frozen=True)
class RewardConfig:
    v_limit: float = 8.33
    step_bonus: float = 0.1
    lane_tolerance: float = 0.5
    lane_bonus: float = 0.3
    lane_gain: float = 2.0
    lane_limit: float = 2.0
    steer_gain: float = 0.3
    collision_gain: float = 10.0
    collision_cap: float = 100.0
    collision_threshold: float = 0.5
    stationary_speed: float = 0.1
    timeout_ticks: int = 90
    timeout_leader_gap: float = 10.0
    timeout_penalty: float = -100.0
    red_gain: float = 2.0
    red_jump_penalty: float = -100.0
    red_stop_bonus: float = 0.3
    stop_zone: float = 25.0
    leader_stop_gap: float = 8.0

    def as_dict(self) -> dict:
        return asdict(self)

    def step_bounds(self, v_max: float) -> tuple[float, float]:
        """(lowest, highest) total of a step on which no terminal penalty fires."""
        lane_low = -self.lane_gain * (self.lane_limit - self.lane_tolerance)
        speed_low = -1.0 - self.steer_gain
        collision_low = -min(self.collision_cap, self.collision_gain * self.collision_threshold)
        light_low = -self.red_gain * v_max / self.v_limit
        low = lane_low + speed_low + collision_low + light_low + self.step_bonus
        high = self.lane_bonus + 1.0 + self.red_stop_bonus + self.step_bonus
        return low, high


DEFAULT_REWARD = RewardConfig()


@dataclass(frozen=True)
class EpisodeContext:
    stationary: int = 0           # consecutive ticks below the stationary speed
    red_zone: bool = False        # stopped-for-red occupancy on the latest tick
    progress: float = 0.0         # route metres gained
    steps: int = 0
    cause: str = "none"           # first terminal cause seen, set once
    step_limit: int | None = None


@dataclass(frozen=True)
class RewardBreakdown:
    r_timeout: float
    r_collision: float
    r_lane: float
    r_speed: float
    r_light: float
    r_steps: float
    total: float
    terminal: bool
    cause: str
    triggered: tuple[str, ...] = ()

    FIELDS = ("r_timeout", "r_collision", "r_lane", "r_speed", "r_light", "r_steps", "total")

    def row(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]


def _status(x) -> EgoStatus:
    return x if isinstance(x, EgoStatus) else x.status


def red_governs(st: EgoStatus, cfg: RewardConfig = DEFAULT_REWARD) -> bool:
    """Red light ahead of the ego with the stop line inside the stop zone."""
    return st.light == "red" and 0.0 <= st.stop_dist < cfg.stop_zone


def speed_targets(world_or_status, cfg: RewardConfig = DEFAULT_REWARD) -> float:
    st = _status(world_or_status)
    if red_governs(st, cfg) or st.leader_gap < cfg.leader_stop_gap:
        return 0.0
    return cfg.v_limit


def lane_reward(d: float, cfg: RewardConfig = DEFAULT_REWARD) -> float:
    d = abs(d)
    if d <= cfg.lane_tolerance:
        return cfg.lane_bonus
    return -cfg.lane_gain * (d - cfg.lane_tolerance)


def speed_reward(v: float, v_target: float, steer: float, cfg: RewardConfig = DEFAULT_REWARD) -> float:
    longitudinal = min(max(1.0 - abs(v - v_target) / cfg.v_limit, -1.0), 1.0)
    return longitudinal - cfg.steer_gain * steer * steer


def collision_reward(intensity: float | None, cfg: RewardConfig = DEFAULT_REWARD) -> float:
    if intensity is None:
        return 0.0
    return -min(cfg.collision_cap, cfg.collision_gain * intensity)


def _advance(ctx: EpisodeContext, prev: EgoStatus | None, now: EgoStatus, cfg: RewardConfig) -> EpisodeContext:
    waiting_for_red = red_governs(now, cfg)
    excused = waiting_for_red or now.leader_gap < cfg.timeout_leader_gap
    if now.v < cfg.stationary_speed and not excused:
        stationary = ctx.stationary + 1
    else:
        stationary = 0
    gained = now.route_s - prev.route_s if prev is not None else 0.0
    return replace(ctx, stationary=stationary, red_zone=waiting_for_red and now.v < cfg.stationary_speed,
                   progress=ctx.progress + gained, steps=ctx.steps + 1)


def triggered_causes(now, ctx: EpisodeContext, cfg: RewardConfig = DEFAULT_REWARD) -> tuple[str, ...]:
    """Every terminal condition holding on this tick, highest priority first.

    ``ctx`` must already include this tick (as returned by ``assess``).
    """
    st = _status(now)
    hits = []
    if st.collision is not None and st.collision > cfg.collision_threshold:
        hits.append("collision")
    if st.crossed_red:
        hits.append("red_light_jump")
    if st.sidewalk:
        hits.append("sidewalk")
    if st.off_map or abs(st.lateral) > cfg.lane_limit:
        hits.append("out_of_lane")
    if ctx.stationary >= cfg.timeout_ticks:
        hits.append("timeout")
    if st.goal_reached:
        hits.append("goal_reached")
    if ctx.step_limit is not None and ctx.steps >= ctx.step_limit:
        hits.append("step_limit")
    return tuple(hits)


def termination_check(now, ctx: EpisodeContext, cfg: RewardConfig = DEFAULT_REWARD) -> str:
    hits = triggered_causes(now, ctx, cfg)
    return hits[0] if hits else "none"


def assess(prev, now, action, ctx: EpisodeContext,
           cfg: RewardConfig = DEFAULT_REWARD) -> tuple[RewardBreakdown, EpisodeContext]:
    """Reward for the tick that led from ``prev`` to ``now`` (statuses or worlds)."""
    prev_st = _status(prev) if prev is not None else None
    st = _status(now)
    steer = min(max(float(action[0]), -1.0), 1.0)
    ctx = _advance(ctx, prev_st, st, cfg)
    hits = triggered_causes(st, ctx, cfg)
    cause = hits[0] if hits else "none"

    r_lane = lane_reward(st.lateral, cfg)
    r_speed = speed_reward(st.v, speed_targets(st, cfg), steer, cfg)
    r_collision = collision_reward(st.collision, cfg)
    r_timeout = cfg.timeout_penalty if "timeout" in hits else 0.0
    if st.crossed_red:
        r_light = cfg.red_jump_penalty
    elif st.light == "red" and st.in_junction:
        r_light = -cfg.red_gain * (st.v / cfg.v_limit)
    elif red_governs(st, cfg) and st.v < cfg.stationary_speed:
        r_light = cfg.red_stop_bonus
    else:
        r_light = 0.0
    r_steps = 0.0 if hits else cfg.step_bonus

    total = r_timeout + r_collision + r_lane + r_speed + r_light + r_steps
    if "timeout" in hits:
        ctx = replace(ctx, stationary=0)
    if hits and ctx.cause == "none":
        ctx = replace(ctx, cause=cause)
    out = RewardBreakdown(r_timeout, r_collision, r_lane, r_speed, r_light, r_steps, total,
                          bool(hits), cause, hits)
    return out, ctx
