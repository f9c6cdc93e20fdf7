"""Benchmark suites, per-cell success tables and infraction analytics."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..reward import INFRACTIONS
from .episode import EpisodeResult, run_episode
from .tasks import make_task
from .train import episode_seed

SUITES = {
    "corl2017": (("straight", "one_turn", "corl_navigation", "corl_nav_dynamic"), "corl2017"),
    "nocrash": (("nocrash_empty", "nocrash_regular", "nocrash_dense"), "nocrash"),
    "tasks5": (("straight", "one_turn", "roundabout", "obstacle_ahead", "cross_intersection"), "training_strict"),
}
EPISODES_PER_CELL = 25


def success_rate(successes: int, episodes: int) -> float:
    return round(100.0 * successes / episodes, 1) if episodes else 0.0


@dataclass
class BenchmarkReport:
    suite: str
    rules: str
    cells: list[dict]
    episodes: list[EpisodeResult]
    meta: dict = field(default_factory=dict)

    CELL_COLUMNS = ("task", "town", "weather", "episodes", "successes", "success_rate")

    def aggregates(self) -> list[dict]:
        """Per-task rows summed over towns and weathers, then one overall row."""
        rows = []
        for task in dict.fromkeys(c["task"] for c in self.cells):
            sub = [c for c in self.cells if c["task"] == task]
            n, s = sum(c["episodes"] for c in sub), sum(c["successes"] for c in sub)
            rows.append({"task": task, "town": "*", "weather": "*", "episodes": n, "successes": s,
                         "success_rate": success_rate(s, n)})
        n, s = sum(c["episodes"] for c in self.cells), sum(c["successes"] for c in self.cells)
        rows.append({"task": "*", "town": "*", "weather": "*", "episodes": n, "successes": s,
                     "success_rate": success_rate(s, n)})
        return rows

    def write(self, out_dir) -> dict[str, str]:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"report.csv": out / "report.csv", "report.json": out / "report.json",
                 "episodes.csv": out / "episodes.csv"}
        with open(paths["report.csv"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.CELL_COLUMNS)
            for c in self.cells + self.aggregates():
                w.writerow([c["task"], c["town"], c["weather"], c["episodes"], c["successes"],
                            f"{c['success_rate']:.1f}"])
        with open(paths["episodes.csv"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EpisodeResult.ROW)
            for e in self.episodes:
                w.writerow(e.row())
        body = {"suite": self.suite, "rules": self.rules, "meta": self.meta, "cells": self.cells,
                "aggregates": self.aggregates(), "infractions": infraction_report(self.episodes)}
        paths["report.json"].write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return {k: str(v) for k, v in paths.items()}


def run_benchmark(driver, suite: str, towns=("A",), weathers=("clear_day",), seed: int = 0, encoder=None,
                  episodes: int = EPISODES_PER_CELL, meta: dict | None = None, tasks=None,
                  on_episode=None) -> BenchmarkReport:
    """``episodes`` runs per (task, town, weather) cell, each with its own derived seed."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    suite_tasks, rules = SUITES[suite]
    if tasks is not None:
        suite_tasks = tuple(t for t in suite_tasks if t in tasks)
    cells, results = [], []
    for task_name in suite_tasks:
        for town in towns:
            task = make_task(task_name, town)
            for weather in weathers:
                wins = 0
                for i in range(episodes):
                    s = episode_seed(seed, task_name, town, weather, i)
                    res = run_episode(task, weather, driver, rules, s, encoder=encoder)
                    results.append(res)
                    wins += res.success
                    if on_episode is not None:
                        on_episode(res)
                cells.append({"task": task_name, "town": town, "weather": weather, "episodes": episodes,
                              "successes": wins, "success_rate": success_rate(wins, episodes)})
    info = {"seed": seed, "towns": list(towns), "weathers": list(weathers), "episodes_per_cell": episodes}
    info.update(meta or {})
    return BenchmarkReport(suite, rules, cells, results, info)


def infraction_report(episodes: list[EpisodeResult]) -> dict:
    """Distance, time alive, speeds and reward averaged over episodes, plus a termination-cause histogram."""
    if not episodes:
        raise ValueError("need at least one episode")
    n = len(episodes)
    dist_km = np.array([e.distance / 1000.0 for e in episodes])
    time_min = np.array([e.time_s / 60.0 for e in episodes])
    causes = Counter(e.cause for e in episodes)
    totals = {c: sum(e.infractions.get(c, 0) for e in episodes) for c in INFRACTIONS}
    return {
        "episodes": n,
        "avg_distance_km": round(float(dist_km.mean()), 6),
        "avg_time_alive_min": round(float(time_min.mean()), 6),
        "avg_speed_kmh": round(float(np.mean([e.mean_speed for e in episodes])), 6),
        "top_speed_kmh": round(float(max(e.top_speed for e in episodes)), 6),
        "avg_reward": round(float(np.mean([e.total_reward for e in episodes])), 6),
        "cause_histogram_pct": {c: round(100.0 * k / n, 4) for c, k in sorted(causes.items())},
        "infraction_totals": totals,
    }
