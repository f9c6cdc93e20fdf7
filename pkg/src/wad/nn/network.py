"""Small DAG of layers with named input ports, concat/reshape nodes and named heads."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .errors import MissingCacheError, NonFiniteError, ShapeError
from .layers import Layer


@dataclass
class _Node:
    name: str
    op: object  # Layer | "concat" | ("reshape", shape)
    inputs: tuple[str, ...]
    out_shape: tuple


class Network:
    """Acyclic network built in topological order.

    >>> net = Network({"x": (3,)})
    >>> net.add("h", Dense(3, 2, "tanh"), "x")
    >>> net.output("y", "h")
    """

    def __init__(self, inputs: dict[str, tuple]):
        self.input_shapes = {k: tuple(v) for k, v in inputs.items()}
        self.nodes: list[_Node] = []
        self._shapes = dict(self.input_shapes)
        self.heads: dict[str, str] = {}
        self._cache: dict[str, np.ndarray] | None = None
        self.input_grads: dict[str, np.ndarray] = {}
        self.dtype = np.float32

    # construction -------------------------------------------------------
    def _check_new(self, name):
        if name in self._shapes:
            raise ValueError(f"duplicate node name {name!r}")

    def add(self, name: str, layer: Layer, source: str) -> "Network":
        self._check_new(name)
        if source not in self._shapes:
            raise KeyError(f"unknown source {source!r} for layer {name!r}")
        if self._shapes[source] != layer.in_shape:
            raise ShapeError(name, layer.in_shape, self._shapes[source])
        layer.name = name
        self.nodes.append(_Node(name, layer, (source,), layer.out_shape))
        self._shapes[name] = layer.out_shape
        return self

    def concat(self, name: str, sources: list[str]) -> "Network":
        self._check_new(name)
        for s in sources:
            if len(self._shapes[s]) != 1:
                raise ShapeError(name, ("flat",), self._shapes[s])
        width = sum(self._shapes[s][0] for s in sources)
        self.nodes.append(_Node(name, "concat", tuple(sources), (width,)))
        self._shapes[name] = (width,)
        return self

    def reshape(self, name: str, source: str, shape) -> "Network":
        self._check_new(name)
        shape = tuple(int(d) for d in shape)
        if int(np.prod(shape)) != int(np.prod(self._shapes[source])):
            raise ShapeError(name, shape, self._shapes[source])
        self.nodes.append(_Node(name, ("reshape", shape), (source,), shape))
        self._shapes[name] = shape
        return self

    def output(self, head: str, node: str) -> "Network":
        if node not in self._shapes:
            raise KeyError(f"unknown node {node!r}")
        self.heads[head] = node
        return self

    def init(self, rng: np.random.Generator, dtype=np.float32) -> "Network":
        self.dtype = dtype
        for node in self.nodes:
            if isinstance(node.op, Layer):
                node.op.init(rng, dtype)
        return self

    # parameters -----------------------------------------------------------
    @property
    def layers(self) -> dict[str, Layer]:
        return {n.name: n.op for n in self.nodes if isinstance(n.op, Layer)}

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers.items():
            for pname, arr in layer.params.items():
                out[f"{name}.{pname}"] = arr
        return out

    def decay_penalty(self) -> float:
        """0.5 * sum(lambda * ||W||^2): the loss term whose gradient backward adds."""
        total = 0.0
        for layer in self.layers.values():
            if layer.weight_decay:
                w = layer.params["weight"]
                total += 0.5 * layer.weight_decay * float(np.sum(w * w))
        return total

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def set_parameters(self, values: dict[str, np.ndarray], strict: bool = True) -> None:
        """Copy values into the existing parameter arrays (in place)."""
        params = self.parameters()
        if strict:
            unknown = set(values) - set(params)
            missing = set(params) - set(values)
            if unknown or missing:
                from .errors import UnknownParameterError
                raise UnknownParameterError(f"unknown={sorted(unknown)} missing={sorted(missing)}")
        for k, v in values.items():
            if k not in params:
                continue
            if params[k].shape != np.shape(v):
                raise ShapeError(k, params[k].shape, np.shape(v))
            params[k][...] = v

    def clone(self) -> "Network":
        other = copy.deepcopy(self)
        other.clear_cache()
        return other

    def astype(self, dtype) -> "Network":
        other = self.clone()
        for layer in other.layers.values():
            for k in layer.params:
                layer.params[k] = layer.params[k].astype(dtype)
        other.dtype = dtype
        return other

    def clear_cache(self) -> None:
        self._cache = None
        for layer in self.layers.values():
            layer.clear_cache()

    # passes ---------------------------------------------------------------
    def forward(self, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        vals: dict[str, np.ndarray] = {}
        for port, shape in self.input_shapes.items():
            if port not in inputs:
                raise KeyError(f"input port {port!r} not bound")
            x = np.asarray(inputs[port], dtype=self.dtype)
            if x.shape[1:] != shape:
                raise ShapeError(port, shape, x.shape[1:])
            vals[port] = x
        for node in self.nodes:
            if isinstance(node.op, Layer):
                y = node.op.forward(vals[node.inputs[0]])
            elif node.op == "concat":
                y = np.concatenate([vals[s] for s in node.inputs], axis=1)
            else:
                src = vals[node.inputs[0]]
                y = src.reshape((src.shape[0],) + node.out_shape)
            if not np.isfinite(y).all():
                raise NonFiniteError(node.name)
            vals[node.name] = y
        self._cache = vals
        return {h: vals[n] for h, n in self.heads.items()}

    __call__ = forward

    def backward(self, output_grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Backpropagate head gradients; returns parameter gradients.

        Gradients w.r.t. the input ports are left in ``self.input_grads``.
        Heads without a supplied gradient contribute nothing.
        """
        if self._cache is None:
            raise MissingCacheError("backward called without a forward cache")
        grads: dict[str, np.ndarray] = {}

        def acc(name, g):
            grads[name] = g if name not in grads else grads[name] + g

        for head, g in output_grads.items():
            node = self.heads[head]
            g = np.asarray(g, dtype=self.dtype)
            if g.shape != self._cache[node].shape:
                raise ShapeError(head, self._cache[node].shape, g.shape)
            acc(node, g)

        pgrads: dict[str, np.ndarray] = {}
        for node in reversed(self.nodes):
            if isinstance(node.op, Layer):
                if node.name not in grads:
                    for pname, arr in node.op.params.items():
                        pgrads[f"{node.name}.{pname}"] = np.zeros_like(arr)
                    if node.op.weight_decay:
                        pgrads[f"{node.name}.weight"] = node.op.weight_decay * node.op.params["weight"]
                    continue
                dx = node.op.backward(grads.pop(node.name))
                for pname, g in node.op.grads.items():
                    pgrads[f"{node.name}.{pname}"] = g
                acc(node.inputs[0], dx)
            elif node.name not in grads:
                continue
            elif node.op == "concat":
                g = grads.pop(node.name)
                start = 0
                for s in node.inputs:
                    w = self._shapes[s][0]
                    acc(s, g[:, start:start + w])
                    start += w
            else:
                g = grads.pop(node.name)
                src = node.inputs[0]
                acc(src, g.reshape((g.shape[0],) + self._shapes[src]))
        for port, shape in self.input_shapes.items():
            if port not in grads:
                n = next(iter(self._cache.values())).shape[0]
                grads[port] = np.zeros((n,) + shape, dtype=self.dtype)
        self.input_grads = {p: grads[p] for p in self.input_shapes}
        return pgrads

    def architecture(self) -> list[dict]:
        out = []
        for node in self.nodes:
            if isinstance(node.op, Layer):
                out.append({"name": node.name, "src": list(node.inputs), **node.op.spec()})
            elif node.op == "concat":
                out.append({"name": node.name, "kind": "concat", "src": list(node.inputs)})
            else:
                out.append({"name": node.name, "kind": "reshape", "src": list(node.inputs), "shape": list(node.op[1])})
        return out


def mlp(inputs: dict[str, tuple], hidden: list[int], out_dim: int, out_activation: str = "linear",
        weight_decay: float = 0.0, head: str = "out") -> Network:
    """Concatenate all inputs and run a plain ReLU MLP with a single head."""
    net = Network(inputs)
    from .layers import Dense
    ports = list(inputs)
    if len(ports) > 1:
        net.concat("cat", ports)
        src = "cat"
    else:
        src = ports[0]
    width = net._shapes[src][0]
    for i, h in enumerate(hidden):
        net.add(f"fc{i}", Dense(width, h, "relu", weight_decay), src)
        src, width = f"fc{i}", h
    net.add(head, Dense(width, out_dim, out_activation, weight_decay), src)
    net.output(head, head)
    return net
