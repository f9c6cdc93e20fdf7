"""Soft actor-critic with a separate state-value network and tanh-squashed gaussian policy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..nn import Adam, Network, mlp
from .buffer import ReplayBuffer
from .common import ACTION_DIM, RAW_DIM, AgentBase, check_obs, config_from_meta, polyak

LOG_2PI = math.log(2.0 * math.pi)
SQUASH_EPS = 1e-6


@dataclass(frozen=True)
class SACConfig:
    gamma: float = 0.99
    tau: float = 0.005
    alpha: float = 0.05                 # 0.2 makes the slow crawl the max-entropy optimum here
    lr: float = 3e-4
    batch: int = 64
    hidden: tuple = (256, 128, 64)
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    warmup: int = 1000
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")


def to_env(a_raw: np.ndarray) -> np.ndarray:
    """tanh-space action in [-1, 1]^3 -> (steer, throttle, brake)."""
    out = np.array(a_raw, dtype=np.float64, copy=True)
    out[..., 1:] = (out[..., 1:] + 1.0) * 0.5
    return out


def from_env(a_env: np.ndarray) -> np.ndarray:
    out = np.array(a_env, dtype=np.float64, copy=True)
    out[..., 1:] = out[..., 1:] * 2.0 - 1.0
    return out


def squashed_log_prob(eps: np.ndarray, log_std: np.ndarray, a: np.ndarray) -> np.ndarray:
    """log pi(a|s) for a = tanh(mu + sigma * eps), summed over action dims -> (n, 1)."""
    gauss = -0.5 * eps * eps - log_std - 0.5 * LOG_2PI
    squash = np.log(1.0 - a * a + SQUASH_EPS)
    return np.sum(gauss - squash, axis=-1, keepdims=True)


class SACAgent(AgentBase):
    kind = "sac"

    def __init__(self, latent_dim: int, cfg: SACConfig = SACConfig(), seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.latent_dim = int(latent_dim)
        self.obs_dim = self.latent_dim + RAW_DIM
        rng = np.random.default_rng([seed, 0x5AC])
        hidden, wd = list(cfg.hidden), cfg.weight_decay
        self.policy = mlp({"obs": (self.obs_dim,)}, hidden, 2 * ACTION_DIM, "linear", wd, head="out").init(rng, dtype)
        self.q1 = mlp({"obs": (self.obs_dim,), "action": (ACTION_DIM,)}, hidden, 1, "linear", wd, "q").init(rng, dtype)
        self.q2 = mlp({"obs": (self.obs_dim,), "action": (ACTION_DIM,)}, hidden, 1, "linear", wd, "q").init(rng, dtype)
        self.value = mlp({"obs": (self.obs_dim,)}, hidden, 1, "linear", wd, head="v").init(rng, dtype)
        self.target_value = self.value.clone()
        self.policy_opt = Adam(self.policy.parameters(), lr=cfg.lr)
        self.q_opt = Adam({**{f"q1.{k}": v for k, v in self.q1.parameters().items()},
                           **{f"q2.{k}": v for k, v in self.q2.parameters().items()}}, lr=cfg.lr)
        self.value_opt = Adam(self.value.parameters(), lr=cfg.lr)
        self.rng = np.random.default_rng([seed, 0xE8])
        self.updates = 0
        self.steps = 0

    def nets(self):
        return {"policy": self.policy, "q1": self.q1, "q2": self.q2, "value": self.value,
                "target_value": self.target_value}

    def optimizers(self):
        return {"policy": self.policy_opt, "q": self.q_opt, "value": self.value_opt}

    def _extra_meta(self):
        return {"updates": str(self.updates), "steps": str(self.steps)}

    @classmethod
    def from_checkpoint(cls, ckpt) -> "SACAgent":
        cls._check_kind(ckpt)
        agent = cls(int(ckpt.meta["latent_dim"]), config_from_meta(SACConfig, ckpt.meta))
        agent._restore(ckpt)
        agent.updates = int(ckpt.meta.get("updates", 0))
        agent.steps = int(ckpt.meta.get("steps", 0))
        return agent

    # -- policy --------------------------------------------------------------
    def _dist(self, obs):
        """(mean, clamped log-std, mask of unclamped log-std entries)."""
        out = self.policy.forward({"obs": obs})["out"]
        mu, raw_log_std = out[:, :ACTION_DIM], out[:, ACTION_DIM:]
        log_std = np.clip(raw_log_std, self.cfg.log_std_min, self.cfg.log_std_max)
        free = (raw_log_std >= self.cfg.log_std_min) & (raw_log_std <= self.cfg.log_std_max)
        return mu, log_std, free

    def sample(self, obs, eps: np.ndarray):
        """Reparameterised sample: (tanh action, log pi, pieces for the backward pass)."""
        mu, log_std, free = self._dist(obs)
        std = np.exp(log_std)
        u = mu + std * eps
        a = np.tanh(u)
        return a, squashed_log_prob(eps, log_std, a), (std, free)

    def select(self, obs, explore: bool = True, deterministic: bool | None = None) -> np.ndarray:
        """Environment action. ``deterministic`` (default: not explore) uses the mean."""
        obs = check_obs(obs, self.obs_dim)
        det = (not explore) if deterministic is None else deterministic
        if explore and not det:
            self.steps += 1
            if self.steps <= self.cfg.warmup:
                return to_env(self.rng.uniform(-1.0, 1.0, ACTION_DIM))
        mu, log_std, _ = self._dist(obs[None])
        u = mu[0].astype(np.float64)
        if not det:
            u = u + np.exp(log_std[0]) * self.rng.normal(size=ACTION_DIM)
        return to_env(np.tanh(u))

    # -- losses --------------------------------------------------------------
    def _min_q(self, obs, a_raw):
        q1 = self.q1.forward({"obs": obs, "action": a_raw})["q"]
        q2 = self.q2.forward({"obs": obs, "action": a_raw})["q"]
        return np.minimum(q1, q2), q1 <= q2

    def value_target(self, obs, eps) -> np.ndarray:
        a, logp, _ = self.sample(obs, eps)
        q, _ = self._min_q(obs, a)
        return q - self.cfg.alpha * logp

    def value_loss(self, obs, v_target) -> tuple[float, dict]:
        v = self.value.forward({"obs": obs})["v"]
        diff = v - v_target
        grads = self.value.backward({"v": (2.0 / len(v)) * diff})
        return float(np.mean(diff * diff)) + self.value.decay_penalty(), grads

    def q_target(self, batch) -> np.ndarray:
        v_next = self.target_value.forward({"obs": batch.next_obs})["v"]
        return batch.reward + self.cfg.gamma * (1.0 - batch.done) * v_next

    def q_loss(self, batch, y) -> tuple[float, dict, float]:
        a_raw = from_env(batch.action).astype(self.q1.dtype)
        n = len(y)
        value, grads, mean_q = 0.0, {}, 0.0
        for tag, net in (("q1", self.q1), ("q2", self.q2)):
            q = net.forward({"obs": batch.obs, "action": a_raw})["q"]
            diff = q - y
            value += float(np.mean(diff * diff)) + net.decay_penalty()
            g = net.backward({"q": (2.0 / n) * diff})
            grads.update({f"{tag}.{k}": v for k, v in g.items()})
            if tag == "q1":
                mean_q = float(np.mean(q))
        return value, grads, mean_q

    def policy_loss(self, obs, eps) -> tuple[float, dict]:
        """mean(alpha * log pi(a~|s) - min Q(s, a~)) with a~ reparameterised through eps."""
        n = len(obs)
        alpha = self.cfg.alpha
        a, logp, (std, free) = self.sample(obs, eps)
        q1 = self.q1.forward({"obs": obs, "action": a})["q"]
        self.q1.backward({"q": np.ones_like(q1)})
        dq1 = self.q1.input_grads["action"]
        q2 = self.q2.forward({"obs": obs, "action": a})["q"]
        self.q2.backward({"q": np.ones_like(q2)})
        dq2 = self.q2.input_grads["action"]
        pick1 = q1 <= q2
        q = np.where(pick1, q1, q2)
        dq_da = np.where(pick1, dq1, dq2)
        value = float(np.mean(alpha * logp - q)) + self.policy.decay_penalty()
        one_minus = 1.0 - a * a
        # d/du of the squash correction term -log(1 - tanh(u)^2 + eps)
        d_squash = 2.0 * a * one_minus / (one_minus + SQUASH_EPS)
        du = (alpha * d_squash - dq_da * one_minus) / n
        d_mu = du
        d_log_std = (du * std * eps - alpha / n) * free
        grads = self.policy.backward({"out": np.concatenate([d_mu, d_log_std], axis=1)})
        return value, grads

    # -- learning ------------------------------------------------------------
    def update(self, buffer: ReplayBuffer) -> dict:
        cfg = self.cfg
        if len(buffer) < cfg.batch:
            return {"skipped": True}
        batch = buffer.sample(cfg.batch)
        eps_v = self.rng.normal(size=(cfg.batch, ACTION_DIM))
        eps_pi = self.rng.normal(size=(cfg.batch, ACTION_DIM))
        v_target = self.value_target(batch.obs, eps_v)
        y = self.q_target(batch)
        v_loss, v_grads = self.value_loss(batch.obs, v_target)
        q_loss, q_grads, mean_q = self.q_loss(batch, y)
        self.value_opt.step(v_grads)
        self.q_opt.step(q_grads)
        p_loss, p_grads = self.policy_loss(batch.obs, eps_pi)
        self.policy_opt.step(p_grads)
        polyak(self.target_value, self.value, cfg.tau)
        self.updates += 1
        return {"skipped": False, "critic_loss": q_loss, "value_loss": v_loss, "actor_loss": p_loss,
                "mean_q": mean_q, "alpha_term": float(cfg.alpha)}
