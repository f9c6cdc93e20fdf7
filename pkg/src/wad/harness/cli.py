"""Command-line entry point: ``wad <subcommand> [options]``.

Exit status is 0 on success, 1 on a usage error and 2 when the run itself
fails; failures also print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

log = logging.getLogger("wad")

USAGE, RUNTIME = 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _names(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="key-value config file (section.key = value)")
    common.add_argument("--seed", type=_u64, help="master seed (overrides run.seed)")
    common.add_argument("--out", type=Path, default=Path("wad_out"), help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("-q", "--quiet", action="store_true")

    p = _Parser(prog="wad", description="Desk-scale driving agents: data, training, evaluation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("collect", parents=[common], help="record frames for the autoencoder")
    c.add_argument("--frames", type=int)

    a = sub.add_parser("train-ae", parents=[common], help="fit the frame autoencoder")
    a.add_argument("--dataset", type=Path, required=True)
    a.add_argument("--epochs", type=int)

    t = sub.add_parser("train", parents=[common], help="curriculum reinforcement learning")
    t.add_argument("--agent", choices=("td3", "sac"), required=True)
    t.add_argument("--ae-ckpt", type=Path, required=True)
    t.add_argument("--stages", type=_names, help="comma-separated task list (overrides train.stages)")
    t.add_argument("--budget", type=int, help="environment steps per stage")

    for name, text in (("eval", "evaluate on a single task"), ("bench", "run a benchmark suite")):
        e = sub.add_parser(name, parents=[common], help=text)
        e.add_argument("--agent-ckpt", type=Path, help="omit to drive with the scripted autopilot")
        e.add_argument("--ae-ckpt", type=Path)
        e.add_argument("--episodes", type=int)
        e.add_argument("--weathers", type=_names)
        if name == "eval":
            e.add_argument("--task")
            e.add_argument("--town")
            e.add_argument("--rules", choices=("training_strict", "corl2017", "nocrash"))
            e.add_argument("--trajectories", action="store_true", help="write trajectory_<ep>.csv per episode")
        else:
            e.add_argument("--suite", choices=("corl2017", "nocrash", "tasks5"))
            e.add_argument("--towns", type=_names)

    r = sub.add_parser("replay", parents=[common], help="re-run a logged episode, dumping frames and a CSV")
    r.add_argument("--log", type=Path, required=True, help="episodes.csv from eval or bench")
    r.add_argument("--row", type=int, default=0, help="zero-based data row in the log")
    r.add_argument("--rules", default="training_strict", choices=("training_strict", "corl2017", "nocrash"))
    r.add_argument("--agent-ckpt", type=Path)
    r.add_argument("--ae-ckpt", type=Path)
    r.add_argument("--every", type=int, default=1, help="save every n-th frame")
    return p


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_hashes(out: Path, inputs: dict[str, Path]) -> None:
    produced = {p.name: _file_hash(p) for p in sorted(out.rglob("*"))
                if p.is_file() and p.name != "hashes.json"}
    body = {"inputs": {k: _file_hash(v) for k, v in sorted(inputs.items())}, "outputs": produced}
    (out / "hashes.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _resolve_config(args):
    from .config import load_config

    cfg = load_config(args.config)
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value, "--set")
    if args.seed is not None:
        cfg["run"]["seed"] = args.seed
    return cfg


def _encoder(path: Path | None):
    from ..latent import Autoencoder

    if path is None:
        return None
    return Autoencoder.load(path)


def _driver(args):
    """(driver, encoder, checkpoint meta) for eval, bench and replay."""
    from ..agents import agent_load
    from .episode import AutopilotDriver, PolicyDriver

    encoder = _encoder(args.ae_ckpt)
    if args.agent_ckpt is None:
        return AutopilotDriver(), encoder, {"driver": "scripted_autopilot"}
    if encoder is None:
        raise UsageError("--agent-ckpt needs --ae-ckpt for observations")
    agent = agent_load(args.agent_ckpt)
    if agent.latent_dim != encoder.latent_dim:
        raise ValueError(f"agent expects a {agent.latent_dim}-wide latent, encoder gives {encoder.latent_dim}")
    return PolicyDriver(agent), encoder, {"driver": agent.kind, "agent_hash": agent.parameter_hash()}


def _inputs(args) -> dict[str, Path]:
    names = ("config", "dataset", "ae_ckpt", "agent_ckpt", "log")
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def cmd_collect(args, cfg, out: Path) -> None:
    from ..latent import collect_dataset

    if args.frames is not None:
        cfg["collect"]["frames"] = args.frames
    c = cfg["collect"]
    ds = collect_dataset(c["frames"], towns=c["towns"], weathers=cfg["run"]["weathers"], seed=cfg["run"]["seed"],
                         size=cfg["ae"]["size"], every=c["every"], steer_noise=c["steer_noise"])
    ds.save(out / "dataset.bin")
    log.info("collected %d frames (%d held out)", len(ds), int(ds.holdout.sum()))


def cmd_train_ae(args, cfg, out: Path) -> None:
    from ..latent import AESpec, FrameDataset, train_ae

    if args.epochs is not None:
        cfg["ae"]["epochs"] = args.epochs
    a = cfg["ae"]
    ds = FrameDataset.load(args.dataset)
    spec = cfg.build("ae", AESpec)
    res = train_ae(spec, ds, a["epochs"], lr=a["lr"], batch=a["batch"], seed=cfg["run"]["seed"],
                   target_mse=a["target_mse"] or None,
                   log=lambda e, tr, ho: log.info("epoch %d train %.5f holdout %.5f", e, tr, ho))
    res.ae.save(out / "ae.ckpt")
    res.write_curve(out / "ae_curve.csv")
    log.info("best holdout MSE %.5f at epoch %d", min(r[2] for r in res.curve), res.best_epoch)


def cmd_train(args, cfg, out: Path) -> None:
    from ..agents import SACAgent, SACConfig, TD3Agent, TD3Config
    from ..agents.buffer import ReplayBuffer
    from .train import Stage, train_curriculum

    tc = cfg["train"]
    if args.stages is not None:
        tc["stages"] = args.stages
    if args.budget is not None:
        tc["budget"] = args.budget
    seed = cfg["run"]["seed"]
    encoder = _encoder(args.ae_ckpt)
    if args.agent == "td3":
        agent = TD3Agent(encoder.latent_dim, cfg.build("td3", TD3Config), seed=seed)
    else:
        agent = SACAgent(encoder.latent_dim, cfg.build("sac", SACConfig), seed=seed)
    stages = [Stage(t, tc["budget"], tc["window"], tc["threshold"]) for t in tc["stages"]]

    def progress(row):
        log.info("stage %d %s ep %d steps %d %s reward %.1f rolling %.2f", row["stage"], row["task"],
                 row["episode"], row["env_steps"], row["cause"], row["reward"], row["rolling_success"])

    run = train_curriculum(agent, stages, encoder, seed=seed, town=cfg["run"]["town"],
                           weathers=cfg["run"]["weathers"], buffer=ReplayBuffer(tc["buffer"], seed=seed),
                           update_every_log=tc["log_every"], on_episode=progress)
    agent.save(out / "agent.ckpt")
    run.write(out / "train_episodes.csv", out / "train_updates.csv")
    with open(out / "trajectory_head.csv", "w") as fh:
        fh.write("env_step,steer,throttle,brake,reward\n")
        for s, st, th, br, rw in run.trajectory:
            fh.write(f"{s},{st:.9g},{th:.9g},{br:.9g},{rw:.9g}\n")
    meta = {"agent": args.agent, "stage_order": [s.task for s in stages], "stages": run.stages,
            "env_steps": run.env_steps, "agent_hash": agent.parameter_hash()}
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def cmd_eval(args, cfg, out: Path) -> None:
    from .bench import infraction_report
    from .episode import EpisodeResult, run_episode
    from .tasks import make_task
    from .train import episode_seed

    ec = cfg["eval"]
    for key in ("task", "town", "rules", "episodes", "weathers"):
        if getattr(args, key) is not None:
            ec[key] = getattr(args, key)
    driver, encoder, meta = _driver(args)
    task = make_task(ec["task"], ec["town"])
    seed = cfg["run"]["seed"]
    results = []
    for weather in ec["weathers"]:
        for i in range(ec["episodes"]):
            traj = out / f"trajectory_{len(results)}.csv" if args.trajectories else None
            res = run_episode(task, weather, driver, ec["rules"], episode_seed(seed, task.name, task.town, weather, i),
                              encoder=encoder, trajectory=traj)
            results.append(res)
            log.info("%s %s #%d: %s (%s) %.0f m", task.name, weather, i, "ok" if res.success else "fail",
                     res.cause, res.distance)
    with open(out / "episodes.csv", "w") as fh:
        fh.write(",".join(EpisodeResult.ROW) + "\n")
        for r in results:
            fh.write(",".join(r.row()) + "\n")
    wins = sum(r.success for r in results)
    body = {"task": task.name, "town": task.town, "rules": ec["rules"], "seed": seed, "episodes": len(results),
            "successes": wins, "success_rate": round(100.0 * wins / len(results), 1), "config_hash": cfg.digest(),
            **meta, "infractions": infraction_report(results)}
    (out / "report.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def cmd_bench(args, cfg, out: Path) -> None:
    from .bench import run_benchmark

    bc = cfg["bench"]
    for key in ("suite", "episodes", "towns", "weathers"):
        if getattr(args, key) is not None:
            bc[key] = getattr(args, key)
    driver, encoder, meta = _driver(args)
    rep = run_benchmark(driver, bc["suite"], towns=bc["towns"], weathers=bc["weathers"], seed=cfg["run"]["seed"],
                        encoder=encoder, episodes=bc["episodes"], meta={"config_hash": cfg.digest(), **meta},
                        on_episode=lambda r: log.info("%s %s %s: %s", r.task, r.town, r.weather, r.cause))
    rep.write(out)
    for row in rep.aggregates():
        log.info("%-20s %3d/%3d  %5.1f%%", row["task"], row["successes"], row["episodes"], row["success_rate"])


def cmd_replay(args, cfg, out: Path) -> None:
    import csv

    from ..perception import rasterize, save_png
    from .episode import run_episode
    from .tasks import make_task

    with open(args.log, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not 0 <= args.row < len(rows):
        raise UsageError(f"--row {args.row} outside the {len(rows)} logged episodes")
    row = rows[args.row]
    driver, encoder, _ = _driver(args)
    frames = out / "frames"
    frames.mkdir(exist_ok=True)
    size = cfg["ae"]["size"] if encoder is None else encoder.spec.size

    def dump(world):
        if world.step_count % args.every == 0:
            save_png(rasterize(world, size), frames / f"frame_{world.step_count:05d}.png")

    res = run_episode(make_task(row["task"], row["town"]), row["weather"], driver, args.rules, int(row["seed"]),
                      encoder=encoder, trajectory=out / "trajectory.csv", frame_hook=dump)
    if (res.cause, str(res.steps)) != (row["cause"], row["steps"]):
        log.warning("replay ended with %s after %d steps; log says %s after %s", res.cause, res.steps,
                    row["cause"], row["steps"])


COMMANDS = {"collect": cmd_collect, "train-ae": cmd_train_ae, "train": cmd_train, "eval": cmd_eval,
            "bench": cmd_bench, "replay": cmd_replay}


def main(argv=None) -> int:
    from .config import ConfigError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve_config(args)
    except UsageError as exc:
        print(f"wad: error: {exc}", file=sys.stderr)
        return USAGE
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return USAGE
    except SystemExit as exc:            # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
        cfg.write(out / "config.txt")
        _write_hashes(out, _inputs(args))
    except UsageError as exc:
        print(f"wad: error: {exc}", file=sys.stderr)
        return USAGE
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
              file=sys.stderr)
        return RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
