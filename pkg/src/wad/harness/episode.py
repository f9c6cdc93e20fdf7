"""Episode loop shared by training, evaluation and replay."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..perception import observe
from ..reward import DEFAULT_REWARD, INFRACTIONS, EpisodeContext, RewardBreakdown, RewardConfig, assess
from ..sim.world import DT, WorldState, step
from .autopilot import scripted_autopilot
from .rules import Judge, RuleProfile, TickRecord, get_profile
from .tasks import OBSTACLE_GAP, TaskSpec, instantiate

TRAJECTORY_COLUMNS = ("step", "x", "y", "theta", "v", "steer", "throttle", "brake", "reward_total",
                      "r_timeout", "r_collision", "r_lane", "r_speed", "r_light", "r_steps")


class DrivingEnv:
    """One task/weather/rule combination as a step-by-step environment.

    ``encoder=None`` skips observation rendering (privileged drivers only).
    """

    def __init__(self, task: TaskSpec, weather: str, rules: RuleProfile | str = "training_strict",
                 encoder=None, reward_cfg: RewardConfig = DEFAULT_REWARD):
        self.task = task
        self.weather = weather
        self.rules = get_profile(rules) if isinstance(rules, str) else rules
        self.encoder = encoder
        self.reward_cfg = reward_cfg
        self.world: WorldState | None = None

    def reset(self, seed: int):
        self.world, self.step_limit = instantiate(self.task, self.weather, seed)
        self.seed = seed
        self.ctx = EpisodeContext(step_limit=self.step_limit)
        gap = OBSTACLE_GAP if self.task.name == "obstacle_ahead" else None
        self.judge = Judge(self.rules, self.task.goal_directed, gap)
        self.total_reward = 0.0
        self.top_speed = 0.0
        return self.observation()

    def observation(self):
        if self.encoder is None:
            return None
        return observe(self.world, self.encoder, self.encoder.latent_dim).vector()

    def step(self, action) -> tuple[np.ndarray | None, RewardBreakdown, bool, dict]:
        prev = self.world.status
        step(self.world, action)
        now = self.world.status
        self.top_speed = max(self.top_speed, now.v)
        br, self.ctx = assess(prev, now, self.world.last_action, self.ctx, self.reward_cfg)
        self.total_reward += br.total
        verdict = self.judge.feed(TickRecord(self.ctx.steps, br.triggered, now.off_map, now.v, now.leader_gap))
        done = verdict.done
        # a step-limit cut is a truncation, not a terminal state, for bootstrapping
        terminal = done and verdict.cause != "step_limit"
        obs = None if (done and now.off_map) else self.observation()
        return obs, br, done, {"terminal": terminal, "verdict": verdict, "clamped": now.clamped}


@dataclass
class EpisodeResult:
    task: str
    town: str
    weather: str
    seed: int
    success: bool
    cause: str
    steps: int
    distance: float                  # metres
    mean_speed: float                # km/h
    top_speed: float                 # km/h
    total_reward: float
    infractions: dict[str, int] = field(default_factory=dict)
    clamped_actions: int = 0

    @property
    def time_s(self) -> float:
        return self.steps * DT

    ROW = ("task", "town", "weather", "seed", "success", "cause", "steps", "distance_m", "mean_speed_kmh",
           "top_speed_kmh", "total_reward", *(f"n_{c}" for c in INFRACTIONS), "clamped_actions")

    def row(self) -> list[str]:
        return [self.task, self.town, self.weather, str(self.seed), str(int(self.success)), self.cause,
                str(self.steps), f"{self.distance:.3f}", f"{self.mean_speed:.3f}", f"{self.top_speed:.3f}",
                f"{self.total_reward:.4f}", *(str(self.infractions.get(c, 0)) for c in INFRACTIONS),
                str(self.clamped_actions)]


class AutopilotDriver:
    needs_observation = False

    def act(self, world, obs):
        return scripted_autopilot(world)


class PolicyDriver:
    """Deterministic action of a trained agent."""

    needs_observation = True

    def __init__(self, agent):
        self.agent = agent

    def act(self, world, obs):
        return self.agent.select(obs, explore=False)


def run_episode(task: TaskSpec, weather: str, driver, rules: RuleProfile | str, seed: int, encoder=None,
                trajectory=None, frame_hook=None, reward_cfg: RewardConfig = DEFAULT_REWARD) -> EpisodeResult:
    """Roll one episode at 6 Hz; ``trajectory`` is an optional path for the per-tick CSV."""
    needs_obs = getattr(driver, "needs_observation", True)
    if needs_obs and encoder is None:
        raise ValueError("this driver needs an encoder to build observations")
    env = DrivingEnv(task, weather, rules, encoder if needs_obs else None, reward_cfg)
    obs = env.reset(seed)
    rows = []
    clamped = 0
    while True:
        action = driver.act(env.world, obs)
        obs, br, done, info = env.step(action)
        clamped += info["clamped"]
        w = env.world
        if trajectory is not None:
            e = w.ego
            rows.append([w.step_count, e.x, e.y, e.theta, e.v, *w.last_action, br.total, *br.row()[:-1]])
        if frame_hook is not None:
            frame_hook(w)
        if done:
            break
    verdict = env.judge.verdict
    if trajectory is not None:
        with open(trajectory, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(TRAJECTORY_COLUMNS)
            for r in rows:
                wr.writerow([r[0], *(f"{v:.6f}" for v in r[1:])])
    dist = env.world.status.odometer
    elapsed = verdict.steps * DT
    return EpisodeResult(task.name, task.town, weather, seed, verdict.success, verdict.cause, verdict.steps, dist,
                         3.6 * dist / elapsed if elapsed > 0 else 0.0, 3.6 * env.top_speed, env.total_reward,
                         dict(verdict.infractions), clamped)
