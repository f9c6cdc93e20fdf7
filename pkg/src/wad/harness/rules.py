"""Rule profiles deciding which infractions end an episode, and how success is judged."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..reward import INFRACTIONS

PROFILE_NAMES = ("training_strict", "corl2017", "nocrash")


@dataclass(frozen=True)
class RuleProfile:
    name: str
    terminate_on: frozenset
    record_only: frozenset
    goal_within_limit: bool = False   # corl: success means reaching the goal inside the time limit

    def ignores(self, cause: str) -> bool:
        return cause not in self.terminate_on and cause not in self.record_only


PROFILES = {
    "training_strict": RuleProfile("training_strict", frozenset(INFRACTIONS), frozenset()),
    "corl2017": RuleProfile("corl2017", frozenset(),
                            frozenset({"collision", "sidewalk", "out_of_lane", "timeout"}), goal_within_limit=True),
    "nocrash": RuleProfile("nocrash", frozenset({"collision"}),
                           frozenset({"red_light_jump", "sidewalk", "out_of_lane", "timeout"})),
}


def get_profile(name: str) -> RuleProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown rule profile {name!r}; choose from {', '.join(PROFILE_NAMES)}") from None


@dataclass
class TickRecord:
    """What the judge needs from one simulator tick."""
    step: int
    causes: tuple[str, ...]          # every terminal condition holding this tick, priority order
    off_map: bool = False
    v: float = 0.0
    leader_gap: float = float("inf")


@dataclass
class Verdict:
    done: bool = False
    cause: str = "none"
    success: bool = False
    steps: int = 0
    infractions: dict[str, int] = field(default_factory=lambda: {c: 0 for c in INFRACTIONS})


class Judge:
    """Incremental referee: feed ticks in order, stop when ``verdict.done``."""

    def __init__(self, profile: RuleProfile, goal_directed: bool = True, gap_window: tuple | None = None):
        self.profile = profile
        self.goal_directed = goal_directed
        self.gap_window = gap_window
        self.verdict = Verdict()
        self._active: set[str] = set()

    def feed(self, rec: TickRecord) -> Verdict:
        v = self.verdict
        if v.done:
            return v
        v.steps = rec.step
        causes = set(rec.causes)
        for c in INFRACTIONS:
            if c in causes and c not in self._active and not self.profile.ignores(c):
                v.infractions[c] += 1
        self._active = causes
        ending = [c for c in rec.causes if c in self.profile.terminate_on]
        if ending:
            return self._end(ending[0], False)
        if rec.off_map:
            # nothing sensible can follow once the car has left every road
            return self._end("out_of_lane", False)
        if "goal_reached" in causes:
            return self._end("goal_reached", True)
        if "step_limit" in causes:
            if self.gap_window is not None:
                lo, hi = self.gap_window
                ok = bool(rec.v < 0.1 and lo <= rec.leader_gap <= hi)
            else:
                ok = not self.goal_directed and not self.profile.goal_within_limit
            return self._end("step_limit", ok)
        return v

    def _end(self, cause: str, success: bool) -> Verdict:
        v = self.verdict
        v.done, v.cause, v.success = True, cause, bool(success)
        return v


def judge_log(log: list[TickRecord], profile: RuleProfile | str, goal_directed: bool = True,
              gap_window: tuple | None = None) -> Verdict:
    """Replay a logged sequence of ticks under ``profile``."""
    if isinstance(profile, str):
        profile = get_profile(profile)
    judge = Judge(profile, goal_directed, gap_window)
    for rec in log:
        if judge.feed(rec).done:
            break
    return judge.verdict
