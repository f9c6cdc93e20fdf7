from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, ShapeError


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> dict[str, np.ndarray]:
    """Bias-corrected Adam update, applied in place.

    All gradients are validated before any parameter moves, so a bad
    gradient never leaves the parameters half-updated.
    """
    for k, g in grads.items():
        if k not in params:
            raise KeyError(f"gradient for unknown parameter {k!r}")
        if np.shape(g) != params[k].shape:
            raise ShapeError(k, params[k].shape, np.shape(g))
        if not np.isfinite(g).all():
            raise NonFiniteError(k)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, g in grads.items():
        p = params[k]
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        adam_step(self.params, grads, self.state)

    def state_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for k in self.state.m:
            out[f"{prefix}.m.{k}"] = self.state.m[k]
            out[f"{prefix}.v.{k}"] = self.state.v[k]
        return out

    def load_state_tensors(self, prefix: str, tensors: dict[str, np.ndarray], t: int) -> None:
        self.state.m.clear()
        self.state.v.clear()
        for k, p in self.params.items():
            mk, vk = f"{prefix}.m.{k}", f"{prefix}.v.{k}"
            if mk in tensors:
                self.state.m[k] = tensors[mk].astype(p.dtype).reshape(p.shape)
                self.state.v[k] = tensors[vk].astype(p.dtype).reshape(p.shape)
        self.state.t = int(t)
