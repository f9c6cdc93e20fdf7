"""End-to-end acceptance checks, one test per criterion.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion together with the measured values. The training
and benchmark checks are marked ``slow`` (about 10 minutes on one core).
"""

import json
import time

import numpy as np
import pytest

from wad.agents import ReplayBuffer, SACAgent, SACConfig, TD3Agent, TD3Config, Transition, polyak, td3_target
from wad.agents.buffer import Batch
from wad.harness.bench import run_benchmark
from wad.harness.cli import main
from wad.harness.episode import AutopilotDriver, PolicyDriver, run_episode
from wad.harness.rules import TickRecord, judge_log
from wad.harness.tasks import make_task
from wad.harness.train import Stage, episode_seed, train_curriculum
from wad.latent import AESpec, Autoencoder, collect_dataset, freeze_guard, train_ae
from wad.nn import Conv2d, ConvTranspose2d, Dense, Network
from wad.nn.gradcheck import check_gradients, grad_check, squared_error_loss
from wad.nn.layers import ACTIVATIONS
from wad.reward import EpisodeContext, assess
from wad.sim.weather import TEST_WEATHERS, TRAIN_WEATHERS
from wad.sim.world import EgoStatus

VL = 8.33
BUDGET = 300_000
EVAL_EPISODES = 25


# ---------------------------------------------------------------- gradient fidelity
def _single(layer, in_shape):
    net = Network({"x": in_shape})
    return net.add("l", layer, "x").output("y", "l")


def _layer_cases(rng):
    for act in ACTIVATIONS:
        yield f"dense/{act}", _single(Dense(3, 2, act, weight_decay=0.01), (3,)), (4, 3), (4, 2)
        yield f"conv/{act}", _single(Conv2d((2, 7, 7), 2, 3, 2, act, 0.01), (2, 7, 7)), (2, 2, 7, 7), (2, 2, 3, 3)
        yield (f"deconv/{act}", _single(ConvTranspose2d((2, 3, 3), 2, 3, 2, act, 0.01), (2, 3, 3)),
               (2, 2, 3, 3), (2, 2, 7, 7))


def _graph_case():
    net = Network({"a": (4,), "b": (2,)})
    net.add("la", Dense(4, 3, "relu"), "a").add("lb", Dense(2, 2, "sigmoid"), "b")
    net.concat("cat", ["la", "lb"]).add("h", Dense(5, 4, "tanh"), "cat")
    net.reshape("r", "h", (1, 2, 2)).add("up", ConvTranspose2d((1, 2, 2), 1, 2, 1, "sigmoid"), "r")
    return net.add("s", Dense(4, 1, "linear"), "h").output("img", "up").output("s", "s")


def _randomize(agent, seed):
    rng = np.random.default_rng(seed)
    for net in agent.nets().values():
        for p in net.parameters().values():
            p[...] = rng.normal(0.0, 0.6, p.shape)


def _batch(obs_dim, n=4, seed=1):
    rng = np.random.default_rng(seed)
    act = np.column_stack([rng.uniform(-1, 1, n), rng.uniform(0, 1, (n, 2))])
    return Batch(rng.normal(size=(n, obs_dim)), act, rng.normal(size=(n, 1)), rng.normal(size=(n, obs_dim)),
                 rng.integers(0, 2, (n, 1)).astype(float), np.arange(n))


def _pair(a, b, na, nb):
    return {**{f"{na}.{k}": v for k, v in a.parameters().items()}, **{f"{nb}.{k}": v for k, v in b.parameters().items()}}


@pytest.mark.criterion("gradient fidelity")
def test_gradient_fidelity(note):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    errors = {}
    for name, net, x_shape, y_shape in _layer_cases(rng):
        net.init(rng, np.float64)
        errors[name] = grad_check(net, {"x": rng.normal(size=x_shape)},
                                  squared_error_loss({"y": rng.normal(size=y_shape)}))
    graph = _graph_case().init(rng, np.float64)
    errors["concat+reshape"] = grad_check(
        graph, {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(3, 2))},
        squared_error_loss({"img": rng.uniform(size=(3, 1, 3, 3)), "s": rng.normal(size=(3, 1))}))

    latent = 4
    td3 = TD3Agent(latent, TD3Config(latent_hidden=(5, 4), raw_hidden=(3,), trunk_hidden=(4, 3),
                                     critic_hidden=(5, 4, 3), batch=4, warmup=0), dtype=np.float64)
    _randomize(td3, 1)
    batch = _batch(td3.obs_dim)
    y = td3.critic_target(batch, rng.normal(0, 0.2, (4, 3)))
    errors["td3/critic"] = check_gradients(_pair(td3.critic1, td3.critic2, "c1", "c2"),
                                           lambda: td3.critic_loss(batch, y)[:2])
    errors["td3/actor"] = check_gradients(td3.actor.parameters(), lambda: td3.actor_loss(batch.obs))

    sac = SACAgent(latent, SACConfig(hidden=(5, 4, 3), batch=4, warmup=0), dtype=np.float64)
    _randomize(sac, 2)
    eps = rng.normal(size=(4, 3))
    v_target = sac.value_target(batch.obs, eps)
    y = sac.q_target(batch)
    errors["sac/value"] = check_gradients(sac.value.parameters(), lambda: sac.value_loss(batch.obs, v_target))
    errors["sac/q"] = check_gradients(_pair(sac.q1, sac.q2, "q1", "q2"), lambda: sac.q_loss(batch, y)[:2])
    errors["sac/policy"] = check_gradients(sac.policy.parameters(), lambda: sac.policy_loss(batch.obs, eps))

    ae = Autoencoder(AESpec(size=16, channels=(2, 2), latent=3, weight_decay=1e-3), seed=0).astype(np.float64)
    for k, p in ae.parameters().items():
        if k.endswith("bias"):
            # zero biases behind a dead unit put deconv outputs exactly on the ReLU kink
            p[...] = rng.normal(0.0, 0.3, p.shape)
    frames = rng.uniform(size=(2, 3, 16, 16))
    errors["autoencoder"] = check_gradients(ae.parameters(), lambda: ae.loss_and_grads(frames))

    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    note(f"{len(errors)} graphs, worst {worst} {errors[worst]:.2e}, {elapsed:.0f} s")
    assert all(np.isfinite(list(errors.values())))
    assert errors[worst] < 1e-4, errors
    assert elapsed < 120


# ---------------------------------------------------------------- reward table
def _st(**kw):
    base = dict(step=1, x=0.0, y=0.0, theta=0.0, v=0.0)
    base.update(kw)
    return EgoStatus(**base)


def _expect(timeout=0.0, collision=0.0, lane=0.3, speed=1.0, light=0.0, steps=0.1, cause="none"):
    return dict(r_timeout=timeout, r_collision=collision, r_lane=lane, r_speed=speed, r_light=light, r_steps=steps,
                cause=cause)


# (label, status fields, steer, context, expected terms)
REWARD_CASES = [
    ("stopped at red in stop zone", dict(light="red", stop_dist=4.0), 0.0, EpisodeContext(),
     _expect(light=0.3)),
    ("cruising at the limit", dict(v=VL), 0.0, EpisodeContext(), _expect()),
    ("standing on an empty road", dict(v=0.0), 0.0, EpisodeContext(), _expect(speed=1.0 - VL / VL)),
    ("slow on an empty road", dict(v=4.0), 0.0, EpisodeContext(), _expect(speed=1.0 - (VL - 4.0) / VL)),
    ("above the limit", dict(v=11.0), 0.0, EpisodeContext(), _expect(speed=1.0 - (11.0 - VL) / VL)),
    ("steering half way", dict(v=VL), 0.5, EpisodeContext(), _expect(speed=1.0 - 0.3 * 0.25)),
    ("steering clamped to full lock", dict(v=VL), -2.0, EpisodeContext(), _expect(speed=1.0 - 0.3)),
    ("waiting behind a close leader", dict(v=0.0, leader_gap=5.0), 0.0, EpisodeContext(), _expect()),
    ("rolling behind a close leader", dict(v=3.0, leader_gap=5.0), 0.0, EpisodeContext(),
     _expect(speed=1.0 - 3.0 / VL)),
    ("red light beyond the stop zone", dict(v=VL, light="red", stop_dist=30.0), 0.0, EpisodeContext(), _expect()),
    ("lane edge of the tolerance", dict(v=VL, lateral=0.5), 0.0, EpisodeContext(), _expect()),
    ("drifting left", dict(v=VL, lateral=-0.75), 0.0, EpisodeContext(), _expect(lane=-2.0 * 0.25)),
    ("one metre off centre", dict(v=VL, lateral=1.0), 0.0, EpisodeContext(), _expect(lane=-1.0)),
    ("at the lane limit", dict(v=VL, lateral=2.0), 0.0, EpisodeContext(), _expect(lane=-2.0 * 1.5)),
    ("beyond the lane limit", dict(v=VL, lateral=2.5), 0.0, EpisodeContext(),
     _expect(lane=-2.0 * 2.0, steps=0.0, cause="out_of_lane")),
    ("left every road", dict(v=VL, off_map=True), 0.0, EpisodeContext(), _expect(steps=0.0, cause="out_of_lane")),
    ("light scrape", dict(v=VL, collision=0.25), 0.0, EpisodeContext(), _expect(collision=-2.5)),
    ("contact at the threshold", dict(v=VL, collision=0.5), 0.0, EpisodeContext(), _expect(collision=-5.0)),
    ("hard contact", dict(v=VL, collision=5.0), 0.0, EpisodeContext(),
     _expect(collision=-50.0, steps=0.0, cause="collision")),
    ("crash capped at the maximum", dict(v=5.0, collision=20.0), 0.0, EpisodeContext(),
     _expect(collision=-100.0, speed=1.0 - (VL - 5.0) / VL, steps=0.0, cause="collision")),
    ("moving through a red junction", dict(v=6.0, light="red", stop_dist=-3.0, in_junction=True), 0.0,
     EpisodeContext(), _expect(speed=1.0 - (VL - 6.0) / VL, light=-2.0 * (6.0 / VL))),
    ("jumping the red light", dict(v=6.0, light="red", stop_dist=-0.5, in_junction=True, crossed_red=True), 0.0,
     EpisodeContext(), _expect(speed=1.0 - (VL - 6.0) / VL, light=-100.0, steps=0.0, cause="red_light_jump")),
    ("crawling in the red stop zone", dict(v=0.5, light="red", stop_dist=4.0), 0.0, EpisodeContext(),
     _expect(speed=1.0 - 0.5 / VL)),
    ("stopped at yellow", dict(v=0.0, light="yellow", stop_dist=4.0), 0.0, EpisodeContext(),
     _expect(speed=0.0)),
    ("on the sidewalk", dict(v=3.0, lateral=1.9, sidewalk=True), 0.0, EpisodeContext(),
     _expect(lane=-2.0 * (1.9 - 0.5), speed=1.0 - (VL - 3.0) / VL, steps=0.0, cause="sidewalk")),
    ("ninetieth stationary tick", dict(v=0.0), 0.0, EpisodeContext(stationary=89),
     _expect(timeout=-100.0, speed=0.0, steps=0.0, cause="timeout")),
    ("eighty-ninth stationary tick", dict(v=0.0), 0.0, EpisodeContext(stationary=88), _expect(speed=0.0)),
    ("long wait behind a leader", dict(v=0.0, leader_gap=6.0), 0.0, EpisodeContext(stationary=89), _expect()),
    ("goal reached", dict(v=VL, goal_reached=True), 0.0, EpisodeContext(),
     _expect(steps=0.0, cause="goal_reached")),
    ("step limit reached", dict(v=VL), 0.0, EpisodeContext(steps=9, step_limit=10),
     _expect(steps=0.0, cause="step_limit")),
    ("collision outranks a red jump", dict(v=VL, collision=20.0, crossed_red=True, light="red", stop_dist=-0.5),
     0.0, EpisodeContext(), _expect(collision=-100.0, light=-100.0, steps=0.0, cause="collision")),
]


@pytest.mark.criterion("reward unit suite")
def test_reward_unit_suite(note):
    causes = {c["cause"] for *_, c in REWARD_CASES}
    assert len(REWARD_CASES) >= 25
    assert causes >= {"none", "collision", "red_light_jump", "sidewalk", "out_of_lane", "timeout", "goal_reached",
                      "step_limit"}
    mismatches = []
    for label, fields, steer, ctx, want in REWARD_CASES:
        now = _st(**fields)
        b, _ = assess(_st(), now, (steer, 0.0, 0.0), ctx)
        got = {k: getattr(b, k) for k in want}
        total = (want["r_timeout"] + want["r_collision"] + want["r_lane"] + want["r_speed"] + want["r_light"]
                 + want["r_steps"])
        if got != want or b.total != total or b.terminal != (want["cause"] != "none"):
            mismatches.append((label, got, want))
    note(f"{len(REWARD_CASES)} cases, {len(REWARD_CASES) - len(mismatches)} exact")
    assert not mismatches


# ---------------------------------------------------------------- rules and micro-oracles
def _tick(step, *causes):
    return TickRecord(step, tuple(causes), v=5.0)


@pytest.mark.criterion("rule-profile differentiation")
def test_rule_profile_differentiation(note):
    log = [_tick(i, *(["red_light_jump"] if i == 40 else []), *(["goal_reached"] if i == 120 else []))
           for i in range(1, 121)]
    corl, nocrash, strict = (judge_log(log, p) for p in ("corl2017", "nocrash", "training_strict"))
    note(f"corl2017 {corl.cause}@{corl.steps}, nocrash {nocrash.cause}@{nocrash.steps} "
         f"(+{nocrash.infractions['red_light_jump']} red), training_strict {strict.cause}@{strict.steps}")
    assert corl.success and corl.steps == 120 and corl.infractions["red_light_jump"] == 0
    assert nocrash.success and nocrash.steps == 120 and nocrash.infractions["red_light_jump"] == 1
    assert strict.done and not strict.success and strict.cause == "red_light_jump" and strict.steps == 40


@pytest.mark.criterion("buffer/polyak/twin-min micro-oracles")
def test_micro_oracles(note):
    y = td3_target(np.array([1.0]), np.array([0.0]), np.array([10.0]), np.array([8.0]), 0.99)
    assert y[0] == 1.0 + 0.99 * 8.0

    def scalar(value):
        net = Network({"x": (1,)}).add("l", Dense(1, 1), "x").output("y", "l").init(np.random.default_rng(0),
                                                                                 np.float64)
        net.set_parameters({"l.weight": np.full((1, 1), value), "l.bias": np.full(1, value)})
        return net

    target = scalar(0.0)
    polyak(target, scalar(1.0), 0.005)
    assert target.parameters()["l.weight"].item() == 0.005

    buf = ReplayBuffer(3)
    for i in range(4):
        buf.push(Transition(np.full(2, float(i)), np.zeros(3), float(i), np.zeros(2), False))
    kept = buf.contents().reward[:, 0].tolist()
    assert kept == [1.0, 2.0, 3.0]
    note(f"y={y[0]}, polyak={target.parameters()['l.weight'].item()}, buffer keeps {kept}")


# ---------------------------------------------------------------- autopilot oracle
@pytest.mark.slow
@pytest.mark.criterion("harness sanity oracle")
def test_harness_sanity_oracle(note):
    t0 = time.perf_counter()
    report = run_benchmark(AutopilotDriver(), "corl2017", tasks=("straight", "one_turn"), episodes=EVAL_EPISODES)
    wins = {c["task"]: c["successes"] for c in report.cells}
    task = make_task("composite")
    collisions = red_jumps = 0
    for i in range(100):
        weather = TRAIN_WEATHERS[i % len(TRAIN_WEATHERS)]
        res = run_episode(task, weather, AutopilotDriver(), "nocrash", episode_seed(0, "composite", weather, i))
        collisions += res.infractions["collision"]
        red_jumps += res.infractions["red_light_jump"]
    elapsed = time.perf_counter() - t0
    note(f"straight {wins['straight']}/25, one_turn {wins['one_turn']}/25, composite x100: "
         f"{collisions} collisions, {red_jumps} red jumps, {elapsed:.0f} s")
    assert wins == {"straight": 25, "one_turn": 25}
    assert collisions == 0 and red_jumps == 0
    assert elapsed < 600


# ---------------------------------------------------------------- learned pipeline
@pytest.fixture(scope="session")
def autoencoder():
    data = collect_dataset(5000, seed=0)
    res = train_ae(AESpec(), data, epochs=200, seed=0, target_mse=0.005)
    return data, res


@pytest.fixture(scope="session")
def trained(autoencoder):
    """Lazily trained straight-stage agents sharing one frozen encoder."""
    ae = autoencoder[1].ae
    token = freeze_guard(ae)
    cache = {}

    def get(kind):
        if kind not in cache:
            agent = (TD3Agent if kind == "td3" else SACAgent)(ae.latent_dim, seed=0)
            run = train_curriculum(agent, [Stage("straight", BUDGET)], ae, seed=0)
            cache[kind] = (agent, run)
        return cache[kind]

    return ae, token, get


def _evaluate(agent, ae, town, weathers):
    task, driver = make_task("straight", town), PolicyDriver(agent)
    wins = 0
    for i in range(EVAL_EPISODES):
        w = weathers[i % len(weathers)]
        wins += run_episode(task, w, driver, "training_strict", episode_seed(1, "eval", town, w, i), encoder=ae).success
    return wins


@pytest.mark.slow
@pytest.mark.criterion("AE quality")
def test_autoencoder_quality(autoencoder, trained, note):
    data, res = autoencoder
    best = min(h for _, _, h in res.curve)
    epochs = len(res.curve) - 1
    ae, token, get = trained
    get("td3")
    note(f"{len(data)} frames, holdout MSE {best:.5f} after {epochs} epochs, encoder hash unchanged "
         f"{freeze_guard(ae) == token}")
    assert len(data) == 5000 and data.holdout.sum() == 500
    assert best < 0.01 and epochs <= 200
    assert freeze_guard(ae) == token


@pytest.mark.slow
@pytest.mark.criterion("TD3 straight training")
def test_td3_straight_training(trained, note):
    ae, _, get = trained
    agent, run = get("td3")
    wins = _evaluate(agent, ae, "A", TRAIN_WEATHERS)
    note(f"{wins}/25 after {run.env_steps} env steps")
    assert run.env_steps <= BUDGET
    assert wins >= 20


@pytest.mark.slow
@pytest.mark.criterion("SAC straight training")
def test_sac_straight_training(trained, note):
    ae, _, get = trained
    agent, run = get("sac")
    wins = _evaluate(agent, ae, "A", TRAIN_WEATHERS)
    note(f"{wins}/25 after {run.env_steps} env steps")
    assert run.env_steps <= BUDGET
    assert wins >= 18


@pytest.mark.slow
@pytest.mark.criterion("generalization direction")
def test_generalization(trained, note):
    ae, _, get = trained
    agent, _ = get("td3")
    train_wins = _evaluate(agent, ae, "A", TRAIN_WEATHERS)
    test_wins = _evaluate(agent, ae, "B", TEST_WEATHERS)
    note(f"town A train weathers {train_wins}/25, town B test weathers {test_wins}/25")
    assert train_wins - test_wins <= 5


@pytest.mark.slow
@pytest.mark.criterion("determinism")
def test_determinism(trained, tmp_path, note):
    ae, _, get = trained
    agent, _ = get("td3")
    ae_path, agent_path = tmp_path / "ae.ckpt", tmp_path / "agent.ckpt"
    ae.save(ae_path)
    agent.save(agent_path)
    outs = []
    for k in range(2):
        out = tmp_path / f"bench{k}"
        argv = ["bench", "--suite", "tasks5", "--episodes", "2", "--seed", "11", "--agent-ckpt", str(agent_path),
                "--ae-ckpt", str(ae_path), "--out", str(out), "-q"]
        assert main(argv) == 0
        outs.append(out)
    files = sorted(p.name for p in outs[0].iterdir())
    same = [f for f in files if (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()]
    cells = json.loads((outs[0] / "report.json").read_text())["cells"]

    trajectories = []
    for _ in range(2):
        learner = TD3Agent(ae.latent_dim, TD3Config(warmup=200), seed=3)
        run = train_curriculum(learner, [Stage("straight", 1500)], ae, seed=3, keep_trajectory=1000)
        trajectories.append((run.trajectory, learner.parameter_hash(), len(run.updates)))
    (traj_a, hash_a, _), (traj_b, hash_b, _) = trajectories
    note(f"bench: {len(same)}/{len(files)} files identical over {len(cells)} cells; "
         f"training: {len(traj_a)} steps identical {traj_a == traj_b}")
    assert same == files and "report.json" in files and "report.csv" in files
    assert len(traj_a) == 1000 and traj_a == traj_b and hash_a == hash_b
