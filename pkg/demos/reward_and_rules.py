"""Walk through the per-tick reward and the three rule profiles.

    python demos/reward_and_rules.py
"""

from wad.harness.rules import TickRecord, judge_log
from wad.reward import DEFAULT_REWARD, EpisodeContext, assess
from wad.sim.world import EgoStatus


def status(**kw):
    return EgoStatus(**{"step": 1, "x": 0.0, "y": 0.0, "theta": 0.0, "v": 0.0, **kw})


SITUATIONS = {
    "cruising at 30 km/h": status(v=8.33),
    "stopped at a red light 4 m out": status(light="red", stop_dist=4.0),
    "waiting behind a car 5 m ahead": status(leader_gap=5.0),
    "one metre off the lane centre": status(v=8.33, lateral=1.0),
    "rolling through a red junction": status(v=6.0, light="red", stop_dist=-3.0, in_junction=True),
    "minor scrape (0.3 m/s)": status(v=8.33, collision=0.3),
    "crash at 20 m/s": status(v=5.0, collision=20.0),
}


def show_reward():
    print(f"{'situation':34s}" + "".join(f"{f:>12s}" for f in ("timeout", "collision", "lane", "speed", "light",
                                                                 "steps", "total")) + "  cause")
    for label, now in SITUATIONS.items():
        b, _ = assess(status(), now, (0.0, 0.0, 0.0), EpisodeContext())
        print(f"{label:34s}" + "".join(f"{x:12.3f}" for x in b.row()) + f"  {b.cause}")

    ctx = EpisodeContext()
    parked = status()
    for tick in range(1, DEFAULT_REWARD.timeout_ticks + 1):
        b, ctx = assess(parked, parked, (0.0, 0.0, 1.0), ctx)
    print(f"\nstanding still on an empty road ends the episode on tick {tick}: {b.cause}, {b.total:.2f}")


def show_rules():
    # one red-light jump on tick 40, goal on tick 120
    log = [TickRecord(i, tuple(c for c, at in (("red_light_jump", 40), ("goal_reached", 120)) if at == i))
           for i in range(1, 121)]
    print("\nthe same log under each rule profile:")
    for profile in ("corl2017", "nocrash", "training_strict"):
        v = judge_log(log, profile)
        print(f"  {profile:16s} cause={v.cause:15s} steps={v.steps:4d} success={v.success} "
              f"red jumps noted={v.infractions['red_light_jump']}")


if __name__ == "__main__":
    show_reward()
    show_rules()
