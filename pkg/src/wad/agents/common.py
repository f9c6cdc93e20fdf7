"""Pieces shared by both agents: action bounds, target updates, checkpoints."""

from __future__ import annotations

from dataclasses import fields

import numpy as np

from ..nn import Network, content_hash, load_checkpoint, save_checkpoint
from ..nn.checkpoint import restore

ACTION_LOW = np.array([-1.0, 0.0, 0.0])
ACTION_HIGH = np.array([1.0, 1.0, 1.0])
ACTION_DIM = 3
RAW_DIM = 9


def clip_action(a: np.ndarray) -> np.ndarray:
    return np.clip(a, ACTION_LOW, ACTION_HIGH)


def random_action(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    shape = (ACTION_DIM,) if n is None else (n, ACTION_DIM)
    return rng.uniform(ACTION_LOW, ACTION_HIGH, size=shape)


def polyak(target: Network, source: Network, tau: float) -> None:
    """target <- tau * source + (1 - tau) * target, in place."""
    src = source.parameters()
    for k, t in target.parameters().items():
        t *= 1.0 - tau
        t += tau * src[k]


def check_obs(obs: np.ndarray, width: int) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float32)
    if obs.shape[-1] != width:
        raise ValueError(f"observation width {obs.shape[-1]} does not match agent input {width}")
    return obs


def config_meta(cfg) -> dict[str, str]:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f"cfg.{f.name}"] = ",".join(map(str, v)) if isinstance(v, (tuple, list)) else str(v)
    return out


def config_from_meta(cls, meta: dict[str, str]):
    kw = {}
    for f in fields(cls):
        key = f"cfg.{f.name}"
        if key not in meta:
            continue
        raw = meta[key]
        default = f.default
        if isinstance(default, tuple):
            kw[f.name] = tuple(int(x) for x in raw.split(",")) if raw else ()
        elif isinstance(default, bool):
            kw[f.name] = raw == "True"
        elif isinstance(default, int):
            kw[f.name] = int(raw)
        elif isinstance(default, float):
            kw[f.name] = float(raw)
        else:
            kw[f.name] = raw
    return cls(**kw)


class AgentBase:
    kind = "agent"

    def nets(self) -> dict[str, Network]:
        raise NotImplementedError

    def optimizers(self) -> dict:
        raise NotImplementedError

    def parameter_hash(self) -> str:
        tensors = {}
        for name, net in self.nets().items():
            tensors.update({f"{name}.{k}": v for k, v in net.parameters().items()})
        return content_hash(tensors)

    def _extra_meta(self) -> dict[str, str]:
        return {}

    def save(self, path) -> None:
        tensors = {}
        for name, net in self.nets().items():
            tensors.update({f"{name}.{k}": v for k, v in net.parameters().items()})
        meta = {"kind": self.kind, "obs_dim": str(self.obs_dim), "latent_dim": str(self.latent_dim),
                **config_meta(self.cfg), **self._extra_meta()}
        for name, opt in self.optimizers().items():
            tensors.update(opt.state_tensors(f"opt_{name}"))
            meta[f"opt_{name}.t"] = str(opt.state.t)
        save_checkpoint(path, tensors, meta)

    @classmethod
    def _check_kind(cls, ckpt) -> None:
        kind = ckpt.meta.get("kind")
        if kind != cls.kind:
            raise TypeError(f"checkpoint holds a {kind!r} agent, not {cls.kind!r}")

    def _restore(self, ckpt) -> None:
        restore(self.nets(), ckpt)
        for name, opt in self.optimizers().items():
            prefix = f"opt_{name}"
            opt.load_state_tensors(prefix, ckpt.tensors, int(ckpt.meta.get(f"{prefix}.t", 0)))


def agent_load(path):
    """Load a TD3 or SAC agent, dispatching on the checkpoint's kind field."""
    from .sac import SACAgent
    from .td3 import TD3Agent

    ckpt = load_checkpoint(path)
    kind = ckpt.meta.get("kind")
    cls = {"td3": TD3Agent, "sac": SACAgent}.get(kind)
    if cls is None:
        raise TypeError(f"{path}: unknown agent kind {kind!r}")
    return cls.from_checkpoint(ckpt)


def agent_save(agent, path) -> None:
    agent.save(path)
