"""Plain-text run configuration: ``section.key = value`` lines over typed defaults.

Unknown keys are an error, so a typo cannot silently fall back to a default.
Every run writes the fully resolved table back out as ``config.txt``.
"""

from __future__ import annotations

import hashlib
from dataclasses import fields

from ..agents.sac import SACConfig
from ..agents.td3 import TD3Config
from ..latent import AESpec
from ..reward import RewardConfig
from ..sim.weather import TEST_WEATHERS, TRAIN_WEATHERS
from .train import CURRICULUM


class ConfigError(ValueError):
    pass


def _dataclass_section(cls) -> dict:
    return {f.name: f.default for f in fields(cls)}


def default_config() -> dict[str, dict]:
    return {
        "run": {"seed": 0, "town": "A", "weathers": TRAIN_WEATHERS},
        "collect": {"frames": 5000, "every": 3, "steer_noise": 0.25, "towns": ("A",)},
        "ae": {**_dataclass_section(AESpec), "epochs": 200, "lr": 1e-4, "batch": 32, "target_mse": 0.0},
        "reward": _dataclass_section(RewardConfig),
        "td3": _dataclass_section(TD3Config),
        "sac": _dataclass_section(SACConfig),
        "train": {"stages": CURRICULUM, "budget": 300_000, "window": 20, "threshold": 0.8,
                  "buffer": 100_000, "log_every": 500},
        "eval": {"task": "straight", "episodes": 25, "town": "A", "weathers": TRAIN_WEATHERS,
                 "rules": "training_strict"},
        "bench": {"suite": "tasks5", "episodes": 25, "towns": ("A",), "weathers": TRAIN_WEATHERS},
        "test": {"weathers": TEST_WEATHERS},
    }


def _coerce(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(x) for x in items)
            return tuple(items)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {type(default).__name__}") from None
    return raw


class Config:
    def __init__(self, table: dict[str, dict] | None = None):
        self.table = table if table is not None else default_config()

    def __getitem__(self, section: str) -> dict:
        return self.table[section]

    def get(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.table[section][key]

    def set(self, dotted: str, raw: str, where: str = "<override>") -> None:
        if "." not in dotted:
            raise ConfigError(f"{where}: key {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        if section not in self.table or key not in self.table[section]:
            raise ConfigError(f"{where}: unknown key {dotted!r}")
        self.table[section][key] = _coerce(raw, self.table[section][key], where)

    def build(self, section: str, cls):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in self.table[section].items() if k in names})

    def snapshot(self) -> str:
        lines = []
        for section in sorted(self.table):
            for key in sorted(self.table[section]):
                v = self.table[section][key]
                text = ",".join(map(str, v)) if isinstance(v, tuple) else repr(v) if isinstance(v, float) else str(v)
                lines.append(f"{section}.{key} = {text}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.snapshot().encode()).hexdigest()

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.snapshot())


def parse_config(text: str, source: str = "<config>") -> Config:
    cfg = Config()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'section.key = value'")
        key, value = line.split("=", 1)
        cfg.set(key.strip(), value, f"{source}:{n}")
    return cfg


def load_config(path=None) -> Config:
    if path is None:
        return Config()
    with open(path) as fh:
        return parse_config(fh.read(), str(path))
