"""Drive every training task with the scripted autopilot and summarise the infractions.

    python demos/autopilot_tour.py --episodes 3 --frames tour_frames
"""

import argparse
from pathlib import Path

from wad.harness.bench import infraction_report, run_benchmark
from wad.harness.episode import AutopilotDriver, run_episode
from wad.harness.tasks import make_task
from wad.perception import rasterize, save_png


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=3)
    ap.add_argument("--towns", default="A,B")
    ap.add_argument("--frames", help="directory for a few rendered observation frames")
    args = ap.parse_args()

    report = run_benchmark(AutopilotDriver(), "tasks5", towns=tuple(args.towns.split(",")),
                           weathers=("clear_day", "day_rain"), episodes=args.episodes)
    for row in report.aggregates():
        print(f"{row['task']:20s} {row['successes']:3d}/{row['episodes']:<3d} {row['success_rate']:5.1f}%")
    summary = infraction_report(report.episodes)
    print(f"avg distance {summary['avg_distance_km']:.3f} km, avg speed {summary['avg_speed_kmh']:.1f} km/h, "
          f"top speed {summary['top_speed_kmh']:.1f} km/h")
    print("termination causes (%):", summary["cause_histogram_pct"])

    if args.frames:
        out = Path(args.frames)
        out.mkdir(parents=True, exist_ok=True)

        def grab(world):
            if world.step_count % 60 == 0:
                save_png(rasterize(world), out / f"one_turn_{world.step_count:04d}.png")

        run_episode(make_task("one_turn"), "cloudy", AutopilotDriver(), "training_strict", seed=0, frame_hook=grab)
        print(f"frames written to {out}/")


if __name__ == "__main__":
    main()
