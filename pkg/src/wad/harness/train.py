"""Step-by-step curriculum: one task at a time, promoting on rolling success."""

from __future__ import annotations

import csv
import hashlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..agents.buffer import ReplayBuffer, Transition
from ..latent import freeze_guard
from ..sim.weather import TRAIN_WEATHERS
from .episode import DrivingEnv
from .tasks import make_task

CURRICULUM = ("straight", "one_turn", "roundabout", "obstacle_ahead", "cross_intersection", "composite")


class FreezeViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class Stage:
    task: str
    budget: int                 # environment steps
    window: int = 20
    threshold: float = 0.8


def default_stages(budget: int = 50_000) -> list[Stage]:
    return [Stage(t, budget) for t in CURRICULUM]


def episode_seed(seed: int, *parts) -> int:
    """Reproducible, decorrelated 63-bit seed: ``seed`` xor a hash of the labels."""
    h = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return (int(seed) ^ int.from_bytes(h[:8], "little")) & (2 ** 63 - 1)


@dataclass
class TrainingRun:
    agent: object
    episodes: list[dict] = field(default_factory=list)
    updates: list[dict] = field(default_factory=list)
    stages: list[dict] = field(default_factory=list)
    trajectory: list[tuple] = field(default_factory=list)   # (env step, steer, throttle, brake, reward)
    env_steps: int = 0

    EPISODE_COLUMNS = ("stage", "task", "episode", "weather", "seed", "steps", "env_steps", "success", "cause",
                       "reward", "rolling_success")
    UPDATE_COLUMNS = ("step", "critic_loss", "actor_loss", "mean_q", "alpha_term")

    def write(self, episodes_path=None, updates_path=None) -> None:
        if episodes_path:
            _write_rows(episodes_path, self.EPISODE_COLUMNS, self.episodes)
        if updates_path:
            _write_rows(updates_path, self.UPDATE_COLUMNS, self.updates)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def train_curriculum(agent, stages: list[Stage], encoder, seed: int = 0, town: str = "A",
                     weathers=TRAIN_WEATHERS, buffer: ReplayBuffer | None = None, update_every_log: int = 500,
                     keep_trajectory: int = 1000, on_episode=None) -> TrainingRun:
    """Train ``agent`` through ``stages`` in order; the replay buffer persists across stages."""
    run = TrainingRun(agent)
    if not stages:
        return run
    buffer = buffer if buffer is not None else ReplayBuffer(seed=seed)
    token = freeze_guard(encoder)
    weathers = list(weathers)
    for k, stage in enumerate(stages):
        if freeze_guard(encoder) != token:
            raise FreezeViolation(f"encoder weights changed before stage {k} ({stage.task})")
        task = make_task(stage.task, town)
        recent: deque = deque(maxlen=stage.window)
        used = 0
        episode = 0
        promoted = False
        while used < stage.budget and not promoted:
            weather = weathers[episode % len(weathers)]
            ep_seed = episode_seed(seed, "train", k, stage.task, episode)
            env = DrivingEnv(task, weather, "training_strict", encoder)
            obs = env.reset(ep_seed)
            done = False
            while not done:
                action = agent.select(obs, explore=True)
                nxt, br, done, info = env.step(action)
                if nxt is None:
                    nxt = obs
                buffer.push(Transition(obs, np.asarray(env.world.last_action), br.total, nxt, info["terminal"]))
                obs = nxt
                used += 1
                run.env_steps += 1
                if len(run.trajectory) < keep_trajectory:
                    run.trajectory.append((run.env_steps, *env.world.last_action, br.total))
                if agent.steps > agent.cfg.warmup:
                    rep = agent.update(buffer)
                    if not rep.get("skipped") and run.env_steps % update_every_log == 0:
                        run.updates.append({"step": run.env_steps, **{c: rep.get(c) for c in
                                                                     TrainingRun.UPDATE_COLUMNS[1:]}})
            verdict = env.judge.verdict
            recent.append(verdict.success)
            rolling = sum(recent) / len(recent)
            row = {"stage": k, "task": stage.task, "episode": episode, "weather": weather, "seed": ep_seed,
                   "steps": verdict.steps, "env_steps": run.env_steps, "success": int(verdict.success),
                   "cause": verdict.cause, "reward": env.total_reward, "rolling_success": rolling}
            run.episodes.append(row)
            if on_episode is not None:
                on_episode(row)
            episode += 1
            promoted = len(recent) == stage.window and rolling >= stage.threshold
        run.stages.append({"index": k, "task": stage.task, "steps": used, "episodes": episode,
                           "promoted": promoted, "reason": "success" if promoted else "budget"})
    if freeze_guard(encoder) != token:
        raise FreezeViolation("encoder weights changed during training")
    return run
