"""Twin-critic deterministic actor-critic (TD3) on the numpy engine."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import Adam, Dense, Network, mlp
from .buffer import ReplayBuffer
from .common import (ACTION_DIM, ACTION_HIGH, ACTION_LOW, RAW_DIM, AgentBase, check_obs, clip_action,
                     config_from_meta, polyak, random_action)


@dataclass(frozen=True)
class TD3Config:
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    target_noise: float = 0.2
    target_noise_clip: float = 0.5
    explore_noise: float = 0.1
    batch: int = 64
    actor_lr: float = 3e-4
    critic_lr: float = 3e-3
    warmup: int = 1000
    latent_hidden: tuple = (150, 100)
    raw_hidden: tuple = (50,)
    trunk_hidden: tuple = (100, 75)
    critic_hidden: tuple = (200, 100, 50)
    critic_head: str = "linear"          # or "sigmoid_scaled"
    q_max: float = 2000.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be at least 1")
        if self.critic_head not in ("linear", "sigmoid_scaled"):
            raise ValueError(f"unknown critic head {self.critic_head!r}")


def td3_target(reward, done, q1_next, q2_next, gamma: float):
    """r + gamma * (1 - done) * min(Q1', Q2')."""
    return reward + gamma * (1.0 - done) * np.minimum(q1_next, q2_next)


def build_actor(latent_dim: int, cfg: TD3Config) -> Network:
    wd = cfg.weight_decay
    net = Network({"latent": (latent_dim,), "raw": (RAW_DIM,)})
    src, width = "latent", latent_dim
    for i, h in enumerate(cfg.latent_hidden):
        net.add(f"lat{i}", Dense(width, h, "relu", wd), src)
        src, width = f"lat{i}", h
    lat_out, lat_w = src, width
    src, width = "raw", RAW_DIM
    for i, h in enumerate(cfg.raw_hidden):
        net.add(f"raw{i}", Dense(width, h, "relu", wd), src)
        src, width = f"raw{i}", h
    net.concat("join", [lat_out, src])
    src, width = "join", lat_w + width
    for i, h in enumerate(cfg.trunk_hidden):
        net.add(f"fc{i}", Dense(width, h, "relu", wd), src)
        src, width = f"fc{i}", h
    for head, act in (("steer", "tanh"), ("throttle", "sigmoid"), ("brake", "sigmoid")):
        net.add(head, Dense(width, 1, act, wd), src)
        net.output(head, head)
    return net


def build_critic(obs_dim: int, cfg: TD3Config) -> Network:
    act = "sigmoid" if cfg.critic_head == "sigmoid_scaled" else "linear"
    return mlp({"obs": (obs_dim,), "action": (ACTION_DIM,)}, list(cfg.critic_hidden), 1, act, cfg.weight_decay,
               head="q")


class TD3Agent(AgentBase):
    kind = "td3"
    HEADS = ("steer", "throttle", "brake")

    def __init__(self, latent_dim: int, cfg: TD3Config = TD3Config(), seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.latent_dim = int(latent_dim)
        self.obs_dim = self.latent_dim + RAW_DIM
        rng = np.random.default_rng([seed, 0x7D3])
        self.actor = build_actor(self.latent_dim, cfg).init(rng, dtype)
        self.critic1 = build_critic(self.obs_dim, cfg).init(rng, dtype)
        self.critic2 = build_critic(self.obs_dim, cfg).init(rng, dtype)
        self.target_actor = self.actor.clone()
        self.target_critic1 = self.critic1.clone()
        self.target_critic2 = self.critic2.clone()
        self.actor_opt = Adam(self.actor.parameters(), lr=cfg.actor_lr)
        critic_params = {**{f"c1.{k}": v for k, v in self.critic1.parameters().items()},
                         **{f"c2.{k}": v for k, v in self.critic2.parameters().items()}}
        self.critic_opt = Adam(critic_params, lr=cfg.critic_lr)
        self.rng = np.random.default_rng([seed, 0xE7])
        self.updates = 0
        self.steps = 0              # environment steps seen through select(explore=True)

    # -- plumbing ------------------------------------------------------------
    def nets(self):
        return {"actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
                "target_actor": self.target_actor, "target_critic1": self.target_critic1,
                "target_critic2": self.target_critic2}

    def optimizers(self):
        return {"actor": self.actor_opt, "critic": self.critic_opt}

    def _extra_meta(self):
        return {"updates": str(self.updates), "steps": str(self.steps)}

    @classmethod
    def from_checkpoint(cls, ckpt) -> "TD3Agent":
        cls._check_kind(ckpt)
        cfg = config_from_meta(TD3Config, ckpt.meta)
        agent = cls(int(ckpt.meta["latent_dim"]), cfg)
        agent._restore(ckpt)
        agent.updates = int(ckpt.meta.get("updates", 0))
        agent.steps = int(ckpt.meta.get("steps", 0))
        return agent

    def _split(self, obs):
        return {"latent": obs[:, :self.latent_dim], "raw": obs[:, self.latent_dim:]}

    def _act(self, net: Network, obs) -> np.ndarray:
        out = net.forward(self._split(obs))
        return np.concatenate([out[h] for h in self.HEADS], axis=1)

    def _q(self, net: Network, obs, action) -> np.ndarray:
        q = net.forward({"obs": obs, "action": action})["q"]
        return q * self.cfg.q_max if self.cfg.critic_head == "sigmoid_scaled" else q

    def _q_scale(self) -> float:
        return self.cfg.q_max if self.cfg.critic_head == "sigmoid_scaled" else 1.0

    # -- acting --------------------------------------------------------------
    def select(self, obs, explore: bool = False) -> np.ndarray:
        obs = check_obs(obs, self.obs_dim)
        if explore:
            self.steps += 1
            if self.steps <= self.cfg.warmup:
                return random_action(self.rng)
        a = self._act(self.actor, obs[None])[0].astype(np.float64)
        if explore:
            a = clip_action(a + self.rng.normal(0.0, self.cfg.explore_noise, ACTION_DIM))
        return a

    # -- losses (also used by the gradient checks) ---------------------------
    def critic_target(self, batch, noise: np.ndarray) -> np.ndarray:
        nxt = self._act(self.target_actor, batch.next_obs)
        eps = np.clip(noise, -self.cfg.target_noise_clip, self.cfg.target_noise_clip)
        a2 = np.clip(nxt + eps, ACTION_LOW, ACTION_HIGH)
        q1 = self._q(self.target_critic1, batch.next_obs, a2)
        q2 = self._q(self.target_critic2, batch.next_obs, a2)
        return td3_target(batch.reward, batch.done, q1, q2, self.cfg.gamma)

    def critic_loss(self, batch, y) -> tuple[float, dict, float]:
        """Sum of both critics' mean squared errors, gradients keyed c1./c2., and mean Q1."""
        n = len(y)
        scale = self._q_scale()
        value, grads, mean_q = 0.0, {}, 0.0
        for tag, net in (("c1", self.critic1), ("c2", self.critic2)):
            q = self._q(net, batch.obs, batch.action)
            diff = q - y
            value += float(np.mean(diff * diff)) + net.decay_penalty()
            g = net.backward({"q": (2.0 / n) * diff * scale})
            grads.update({f"{tag}.{k}": v for k, v in g.items()})
            if tag == "c1":
                mean_q = float(np.mean(q))
        return value, grads, mean_q

    def actor_loss(self, obs) -> tuple[float, dict]:
        """-mean Q1(s, pi(s)) and its gradient with respect to the actor parameters."""
        n = len(obs)
        a = self._act(self.actor, obs)
        q = self._q(self.critic1, obs, a)
        value = -float(np.mean(q)) + self.actor.decay_penalty()
        self.critic1.backward({"q": np.full_like(q, -1.0 / n) * self._q_scale()})
        da = self.critic1.input_grads["action"]
        grads = self.actor.backward({h: da[:, i:i + 1] for i, h in enumerate(self.HEADS)})
        return value, grads

    # -- learning ------------------------------------------------------------
    def update(self, buffer: ReplayBuffer) -> dict:
        cfg = self.cfg
        if len(buffer) < cfg.batch:
            return {"skipped": True}
        batch = buffer.sample(cfg.batch)
        noise = self.rng.normal(0.0, cfg.target_noise, (cfg.batch, ACTION_DIM))
        y = self.critic_target(batch, noise)
        c_loss, c_grads, mean_q = self.critic_loss(batch, y)
        self.critic_opt.step(c_grads)
        self.updates += 1
        report = {"skipped": False, "critic_loss": c_loss, "actor_loss": None, "mean_q": mean_q}
        if self.updates % cfg.policy_delay == 0:
            a_loss, a_grads = self.actor_loss(batch.obs)
            self.actor_opt.step(a_grads)
            report["actor_loss"] = a_loss
            polyak(self.target_actor, self.actor, cfg.tau)
            polyak(self.target_critic1, self.critic1, cfg.tau)
            polyak(self.target_critic2, self.critic2, cfg.tau)
        return report
