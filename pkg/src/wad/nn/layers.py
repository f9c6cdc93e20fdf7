"""Layer primitives operating on batched numpy arrays.

Dense layers take ``(N, in_dim)`` inputs; convolutional layers take
``(N, C, H, W)``. Every parametrised layer fuses its activation so the
backward pass can use the cached output directly.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import MissingCacheError, ShapeError

ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")


def activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        # split by sign so large |z| never overflows exp
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if kind == "linear":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(y: np.ndarray, dy: np.ndarray, kind: str) -> np.ndarray:
    """Gradient w.r.t. the pre-activation, expressed through the output ``y``."""
    if kind == "relu":
        return dy * (y > 0)
    if kind == "tanh":
        return dy * (1 - y * y)
    if kind == "sigmoid":
        return dy * y * (1 - y)
    if kind == "linear":
        return dy
    raise ValueError(f"unknown activation {kind!r}")


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Parametrised layer with a fused activation."""

    kind = "layer"

    def __init__(self, activation: str = "linear", weight_decay: float = 0.0):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        self.activation = activation
        self.weight_decay = float(weight_decay)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.name = self.kind
        self._x = None
        self._y = None

    in_shape: tuple
    out_shape: tuple

    def init(self, rng: np.random.Generator, dtype=np.float32) -> None:
        raise NotImplementedError

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1:] != self.in_shape:
            raise ShapeError(self.name, self.in_shape, x.shape[1:])
        y = activate(self._affine(x), self.activation)
        self._x, self._y = x, y
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise MissingCacheError(f"layer {self.name!r} has no forward cache")
        dz = activation_grad(self._y, dy, self.activation)
        dx = self._affine_backward(dz)
        if self.weight_decay:
            self.grads["weight"] = self.grads["weight"] + self.weight_decay * self.params["weight"]
        return dx

    def clear_cache(self) -> None:
        self._x = self._y = None

    def _affine(self, x):
        raise NotImplementedError

    def _affine_backward(self, dz):
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int, activation: str = "linear", weight_decay: float = 0.0):
        super().__init__(activation, weight_decay)
        self.in_dim, self.out_dim = int(in_dim), int(out_dim)
        self.in_shape = (self.in_dim,)
        self.out_shape = (self.out_dim,)

    def init(self, rng, dtype=np.float32):
        self.params["weight"] = glorot_uniform(rng, (self.in_dim, self.out_dim), self.in_dim, self.out_dim, dtype)
        self.params["bias"] = np.zeros(self.out_dim, dtype=dtype)

    def _affine(self, x):
        return x @ self.params["weight"] + self.params["bias"]

    def _affine_backward(self, dz):
        self.grads = {"weight": self._x.T @ dz, "bias": dz.sum(axis=0)}
        return dz @ self.params["weight"].T

    def spec(self):
        return {"kind": "dense", "in": self.in_dim, "out": self.out_dim, "activation": self.activation}


def _conv_out(size: int, k: int, stride: int) -> int:
    return (size - k) // stride + 1


class Conv2d(Layer):
    """Valid (unpadded) strided 2D convolution, weights shaped (F, C, kh, kw)."""

    kind = "conv2d"

    def __init__(self, in_shape, out_channels: int, kernel=(3, 3), stride: int = 2,
                 activation: str = "relu", weight_decay: float = 0.0):
        super().__init__(activation, weight_decay)
        kernel = (kernel, kernel) if np.isscalar(kernel) else tuple(kernel)
        if stride < 1 or min(kernel) < 1:
            raise ValueError("conv2d requires kernel and stride >= 1")
        c, h, w = in_shape
        self.in_shape = (int(c), int(h), int(w))
        self.kernel = (int(kernel[0]), int(kernel[1]))
        self.stride = int(stride)
        self.out_channels = int(out_channels)
        ho, wo = _conv_out(h, self.kernel[0], stride), _conv_out(w, self.kernel[1], stride)
        if ho < 1 or wo < 1:
            raise ShapeError(self.name, ("spatial >= kernel",), self.in_shape)
        self.out_shape = (self.out_channels, ho, wo)

    def init(self, rng, dtype=np.float32):
        c = self.in_shape[0]
        kh, kw = self.kernel
        fan_in, fan_out = c * kh * kw, self.out_channels * kh * kw
        self.params["weight"] = glorot_uniform(rng, (self.out_channels, c, kh, kw), fan_in, fan_out, dtype)
        self.params["bias"] = np.zeros(self.out_channels, dtype=dtype)

    def _affine(self, x):
        n = x.shape[0]
        kh, kw = self.kernel
        s = self.stride
        f, ho, wo = self.out_shape
        win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)
        self._cols = cols
        z = cols @ self.params["weight"].reshape(f, -1).T + self.params["bias"]
        return z.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    def _affine_backward(self, dz):
        n = dz.shape[0]
        f, ho, wo = self.out_shape
        c, h, w = self.in_shape
        kh, kw = self.kernel
        s = self.stride
        wmat = self.params["weight"].reshape(f, -1)
        dzf = dz.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        self.grads = {
            "weight": (dzf.T @ self._cols).reshape(self.params["weight"].shape),
            "bias": dzf.sum(axis=0),
        }
        dcols = (dzf @ wmat).reshape(n, ho, wo, c, kh, kw)
        dx = np.zeros((n, c, h, w), dtype=dz.dtype)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx

    def clear_cache(self):
        super().clear_cache()
        self._cols = None

    def spec(self):
        return {"kind": "conv2d", "in": list(self.in_shape), "out": self.out_channels,
                "kernel": list(self.kernel), "stride": self.stride, "activation": self.activation}


class ConvTranspose2d(Layer):
    """Strided transposed convolution (decoder upsampling), weights shaped (C, F, kh, kw).

    Output spatial size is ``(H - 1) * stride + kernel``.
    """

    kind = "deconv2d"

    def __init__(self, in_shape, out_channels: int, kernel=(3, 3), stride: int = 2,
                 activation: str = "relu", weight_decay: float = 0.0):
        super().__init__(activation, weight_decay)
        kernel = (kernel, kernel) if np.isscalar(kernel) else tuple(kernel)
        if stride < 1 or min(kernel) < 1:
            raise ValueError("deconv2d requires kernel and stride >= 1")
        c, h, w = in_shape
        self.in_shape = (int(c), int(h), int(w))
        self.kernel = (int(kernel[0]), int(kernel[1]))
        self.stride = int(stride)
        self.out_channels = int(out_channels)
        self.out_shape = (self.out_channels, (h - 1) * stride + self.kernel[0], (w - 1) * stride + self.kernel[1])

    def init(self, rng, dtype=np.float32):
        c = self.in_shape[0]
        kh, kw = self.kernel
        fan_in, fan_out = c * kh * kw, self.out_channels * kh * kw
        self.params["weight"] = glorot_uniform(rng, (c, self.out_channels, kh, kw), fan_in, fan_out, dtype)
        self.params["bias"] = np.zeros(self.out_channels, dtype=dtype)

    def _affine(self, x):
        n = x.shape[0]
        c, h, w = self.in_shape
        f, ho, wo = self.out_shape
        kh, kw = self.kernel
        s = self.stride
        xf = x.transpose(0, 2, 3, 1).reshape(n * h * w, c)
        cols = (xf @ self.params["weight"].reshape(c, -1)).reshape(n, h, w, f, kh, kw)
        out = np.zeros((n, f, ho, wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                out[:, :, i:i + s * h:s, j:j + s * w:s] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return out + self.params["bias"][None, :, None, None]

    def _affine_backward(self, dz):
        n = dz.shape[0]
        c, h, w = self.in_shape
        f = self.out_channels
        kh, kw = self.kernel
        s = self.stride
        win = sliding_window_view(dz, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :h, :w]
        dcols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, f * kh * kw)
        xf = self._x.transpose(0, 2, 3, 1).reshape(n * h * w, c)
        wmat = self.params["weight"].reshape(c, -1)
        self.grads = {
            "weight": (xf.T @ dcols).reshape(self.params["weight"].shape),
            "bias": dz.sum(axis=(0, 2, 3)),
        }
        return (dcols @ wmat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)

    def spec(self):
        return {"kind": "deconv2d", "in": list(self.in_shape), "out": self.out_channels,
                "kernel": list(self.kernel), "stride": self.stride, "activation": self.activation}
