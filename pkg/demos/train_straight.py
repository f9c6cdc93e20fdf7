"""Full pipeline on the straight task: collect frames, fit the autoencoder,
train an agent with the encoder frozen, then evaluate in both towns.

    python demos/train_straight.py --agent td3 --out straight_run

Defaults match the acceptance run (5000 frames, early stop at holdout MSE
0.005, 300k step budget); expect 10-20 minutes on one core.
"""

import argparse
import time
from pathlib import Path

from wad.agents import SACAgent, TD3Agent
from wad.harness.episode import PolicyDriver, run_episode
from wad.harness.tasks import make_task
from wad.harness.train import Stage, episode_seed, train_curriculum
from wad.latent import AESpec, collect_dataset, freeze_guard, train_ae
from wad.sim.weather import TEST_WEATHERS, TRAIN_WEATHERS


def evaluate(agent, ae, town, weathers, n):
    task, driver = make_task("straight", town), PolicyDriver(agent)
    wins = 0
    for i in range(n):
        w = weathers[i % len(weathers)]
        wins += run_episode(task, w, driver, "training_strict", episode_seed(1, "eval", town, w, i), encoder=ae).success
    return wins


def main():
    ap = argparse.ArgumentParser(description="collect -> autoencoder -> agent -> evaluation")
    ap.add_argument("--agent", choices=("td3", "sac"), default="td3")
    ap.add_argument("--frames", type=int, default=5000)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--budget", type=int, default=300_000)
    ap.add_argument("--episodes", type=int, default=25)
    ap.add_argument("--out", default="straight_run")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    data = collect_dataset(args.frames, seed=0)
    print(f"[{time.perf_counter() - t0:5.0f}s] collected {len(data)} frames ({int(data.holdout.sum())} holdout)")

    res = train_ae(AESpec(), data, epochs=args.epochs, seed=0, target_mse=0.005,
                   log=lambda e, tr, ho: print(f"    epoch {e:3d} train {tr:.5f} holdout {ho:.5f}"))
    res.ae.save(out / "ae.ckpt")
    res.write_curve(out / "ae_curve.csv")
    print(f"[{time.perf_counter() - t0:5.0f}s] autoencoder best holdout {res.curve[res.best_epoch][2]:.5f}")

    token = freeze_guard(res.ae)
    agent = (TD3Agent if args.agent == "td3" else SACAgent)(res.ae.latent_dim, seed=0)

    def progress(row):
        if row["episode"] % 10 == 0:
            print(f"    episode {row['episode']:4d} env steps {row['env_steps']:6d} {row['cause']:13s} "
                  f"rolling success {row['rolling_success']:.2f}")

    run = train_curriculum(agent, [Stage("straight", args.budget)], res.ae, seed=0, on_episode=progress)
    agent.save(out / "agent.ckpt")
    run.write(out / "train_episodes.csv", out / "train_updates.csv")
    print(f"[{time.perf_counter() - t0:5.0f}s] trained for {run.env_steps} env steps; "
          f"encoder unchanged: {freeze_guard(res.ae) == token}")

    a = evaluate(agent, res.ae, "A", TRAIN_WEATHERS, args.episodes)
    b = evaluate(agent, res.ae, "B", TEST_WEATHERS, args.episodes)
    print(f"[{time.perf_counter() - t0:5.0f}s] town A / train weathers {a}/{args.episodes}, "
          f"town B / test weathers {b}/{args.episodes}")


if __name__ == "__main__":
    main()
