from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray       # (n, 1)
    next_obs: np.ndarray
    done: np.ndarray         # (n, 1) float 0/1
    indices: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions with FIFO eviction and seeded uniform sampling."""

    def __init__(self, capacity: int = 100_000, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.rng = np.random.default_rng([seed, 0xB0F])
        self._next = 0
        self._size = 0
        self._obs = self._act = self._rew = self._next_obs = self._done = None

    def __len__(self) -> int:
        return self._size

    def _allocate(self, obs_dim: int, act_dim: int) -> None:
        c = self.capacity
        self._obs = np.zeros((c, obs_dim), dtype=np.float32)
        self._next_obs = np.zeros((c, obs_dim), dtype=np.float32)
        self._act = np.zeros((c, act_dim), dtype=np.float32)
        self._rew = np.zeros((c, 1), dtype=np.float32)
        self._done = np.zeros((c, 1), dtype=np.float32)

    def push(self, t: Transition | None = None, **kw) -> None:
        t = t or Transition(**kw)
        obs = np.asarray(t.obs, dtype=np.float32).reshape(-1)
        act = np.asarray(t.action, dtype=np.float32).reshape(-1)
        if self._obs is None:
            self._allocate(obs.size, act.size)
        elif obs.size != self._obs.shape[1] or act.size != self._act.shape[1]:
            raise ValueError(f"transition widths ({obs.size}, {act.size}) do not match buffer "
                             f"({self._obs.shape[1]}, {self._act.shape[1]})")
        i = self._next
        self._obs[i] = obs
        self._next_obs[i] = np.asarray(t.next_obs, dtype=np.float32).reshape(-1)
        self._act[i] = act
        self._rew[i, 0] = t.reward
        self._done[i, 0] = float(bool(t.done))
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def contents(self) -> Batch:
        """Everything stored, oldest first."""
        start = self._next if self._size == self.capacity else 0
        idx = (start + np.arange(self._size)) % self.capacity
        return self._gather(idx)

    def sample(self, n: int, seed: int | None = None) -> Batch:
        """``n`` transitions drawn uniformly with replacement from the filled region."""
        if self._size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        rng = self.rng if seed is None else np.random.default_rng(seed)
        return self._gather(rng.integers(0, self._size, size=n))

    def _gather(self, idx) -> Batch:
        return Batch(self._obs[idx], self._act[idx], self._rew[idx], self._next_obs[idx], self._done[idx], idx)
