"""Central finite-difference gradient verification (64-bit)."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .network import Network

REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(params: dict[str, np.ndarray],
                    loss_and_grads: Callable[[], tuple[float, dict[str, np.ndarray]]],
                    h: float = 1e-5) -> float:
    """Compare analytic gradients with (L(w+h) - L(w-h)) / 2h for every element.

    ``loss_and_grads`` is evaluated at the current parameter values and must
    return the scalar loss plus gradients keyed like ``params``. Parameters are
    perturbed in place and restored.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError("finite-difference step must lie in [1e-7, 1e-4]")
    for k, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"gradient checks need float64 parameters ({k} is {p.dtype})")
    if not params:
        return 0.0
    _, analytic = loss_and_grads()
    analytic = {k: np.array(v, dtype=np.float64) for k, v in analytic.items()}
    worst = 0.0
    for k, p in params.items():
        flat = p.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_and_grads()[0]
            flat[i] = orig - h
            lm = loss_and_grads()[0]
            flat[i] = orig
            numeric[i] = (lp - lm) / (2 * h)
        worst = max(worst, relative_error(analytic[k].reshape(-1), numeric))
    return worst


def grad_check(net: Network, inputs: dict[str, np.ndarray],
               loss: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
               h: float = 1e-5) -> float:
    """Worst relative error between backprop and finite differences for ``net``.

    ``loss`` maps the network outputs to ``(value, d value / d outputs)``.
    The check runs on a float64 copy; ``net`` itself is untouched.
    """
    net64 = net.astype(np.float64)
    x64 = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}

    def fn():
        out = net64.forward(x64)
        value, out_grads = loss(out)
        return float(value) + net64.decay_penalty(), net64.backward(out_grads)

    return check_gradients(net64.parameters(), fn, h)


def squared_error_loss(targets: dict[str, np.ndarray]):
    """0.5 * sum of squared errors over the given heads, averaged over the batch."""

    def loss(out):
        value = 0.0
        grads = {}
        for k, t in targets.items():
            diff = out[k] - t
            n = diff.shape[0]
            value += 0.5 * float(np.sum(diff * diff)) / n
            grads[k] = diff / n
        return value, grads

    return loss
