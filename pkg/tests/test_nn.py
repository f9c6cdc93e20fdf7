import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wad.nn import (Adam, AdamState, CheckpointCorruptError, CheckpointVersionError, Conv2d, ConvTranspose2d, Dense,
                    MissingCacheError, Network, NonFiniteError, ShapeError, UnknownParameterError, adam_step,
                    content_hash, grad_check, load_checkpoint, mlp, net_tensors, restore, save_checkpoint,
                    squared_error_loss)
from wad.nn.checkpoint import MAGIC


def _single(layer, shape):
    net = Network({"x": shape})
    net.add("l", layer, "x").output("y", "l")
    return net


def test_dense_identity_relu_clamps_negative():
    net = _single(Dense(2, 2, "relu"), (2,)).init(np.random.default_rng(0))
    net.set_parameters({"l.weight": np.eye(2), "l.bias": np.zeros(2)})
    out = net.forward({"x": np.array([[-1.0, 2.0]])})["y"]
    np.testing.assert_array_equal(out, [[0.0, 2.0]])


def test_conv_all_ones_sums_nine_products():
    net = _single(Conv2d((1, 3, 3), 1, 3, 2, "linear"), (1, 3, 3)).init(np.random.default_rng(0))
    net.set_parameters({"l.weight": np.ones((1, 1, 3, 3)), "l.bias": np.zeros(1)})
    out = net.forward({"x": np.ones((1, 1, 3, 3))})["y"]
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == 9.0


def test_sigmoid_of_zero_is_half():
    net = _single(Dense(1, 1, "sigmoid"), (1,)).init(np.random.default_rng(0))
    net.set_parameters({"l.weight": np.zeros((1, 1)), "l.bias": np.zeros(1)})
    assert net.forward({"x": np.array([[3.0]])})["y"].item() == 0.5


def test_scalar_dense_gradient_and_weight_decay():
    for decay, expected in [(0.0, 3.0), (0.1, 3.0 + 0.1 * 2.0)]:
        net = _single(Dense(1, 1, "linear", weight_decay=decay), (1,)).init(np.random.default_rng(0), np.float64)
        net.set_parameters({"l.weight": np.array([[2.0]]), "l.bias": np.zeros(1)})
        net.forward({"x": np.array([[3.0]])})
        g = net.backward({"y": np.array([[1.0]])})
        assert g["l.weight"].item() == pytest.approx(expected, abs=1e-12)
        assert g["l.bias"].item() == 1.0


def test_tanh_local_gradient_at_zero():
    net = _single(Dense(1, 1, "tanh"), (1,)).init(np.random.default_rng(0), np.float64)
    net.set_parameters({"l.weight": np.array([[1.0]]), "l.bias": np.zeros(1)})
    net.forward({"x": np.array([[0.0]])})
    net.backward({"y": np.array([[1.0]])})
    assert net.input_grads["x"].item() == 1.0


def test_backward_without_forward_raises():
    net = _single(Dense(2, 2), (2,)).init(np.random.default_rng(0))
    with pytest.raises(MissingCacheError):
        net.backward({"y": np.zeros((1, 2))})


def test_dimension_mismatch_names_layer():
    net = Network({"x": (3,)})
    with pytest.raises(ShapeError) as exc:
        net.add("hidden", Dense(4, 2), "x")
    assert exc.value.layer == "hidden"
    net.add("ok", Dense(3, 2), "x").output("y", "ok").init(np.random.default_rng(0))
    with pytest.raises(ShapeError):
        net.forward({"x": np.zeros((1, 5))})


def test_non_finite_output_names_first_layer():
    net = Network({"x": (1,)})
    net.add("a", Dense(1, 1, "linear"), "x").add("b", Dense(1, 1, "linear"), "a").output("y", "b")
    net.init(np.random.default_rng(0), np.float64)
    net.set_parameters({"a.weight": np.array([[1e300]]), "a.bias": [0.0], "b.weight": [[1e300]], "b.bias": [0.0]})
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError) as exc:
        net.forward({"x": np.array([[1e300]])})
    assert exc.value.where == "a"


# ---------------------------------------------------------------- Adam

def test_adam_first_step_closed_form():
    p = {"w": np.zeros(1)}
    st_ = AdamState(lr=0.001)
    adam_step(p, {"w": np.ones(1)}, st_)
    assert st_.t == 1
    assert p["w"][0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-15)


def test_adam_zero_gradient_keeps_weights():
    p = {"w": np.array([0.5, -2.0])}
    st_ = AdamState(lr=0.01)
    adam_step(p, {"w": np.zeros(2)}, st_)
    np.testing.assert_array_equal(p["w"], [0.5, -2.0])
    assert st_.t == 1


def test_adam_two_steps():
    p = {"w": np.zeros(1)}
    st_ = AdamState(lr=0.001)
    adam_step(p, {"w": np.ones(1)}, st_)
    adam_step(p, {"w": np.ones(1)}, st_)
    assert p["w"][0] == pytest.approx(-0.002, abs=1e-6)
    assert st_.t == 2


def test_adam_rejects_nonfinite_without_partial_update():
    p = {"a": np.zeros(2), "b": np.zeros(2)}
    st_ = AdamState(lr=0.1)
    with pytest.raises(NonFiniteError):
        adam_step(p, {"a": np.ones(2), "b": np.array([1.0, np.nan])}, st_)
    np.testing.assert_array_equal(p["a"], 0.0)
    assert st_.t == 0
    with pytest.raises(ShapeError):
        adam_step(p, {"a": np.ones(3)}, st_)


# ---------------------------------------------------------------- gradient checks

def _tanh_net(rng):
    net = Network({"x": (3,)})
    net.add("l", Dense(3, 2, "tanh", weight_decay=0.01), "x").output("y", "l")
    return net.init(rng, np.float64)


def test_grad_check_dense_tanh():
    rng = np.random.default_rng(1)
    net = _tanh_net(rng)
    x = rng.normal(size=(5, 3))
    err = grad_check(net, {"x": x}, squared_error_loss({"y": rng.normal(size=(5, 2))}))
    assert err < 1e-4


@pytest.mark.parametrize("act", ["relu", "tanh", "sigmoid", "linear"])
def test_grad_check_conv_every_activation(act):
    rng = np.random.default_rng(2)
    net = _single(Conv2d((2, 7, 7), 1, 3, 2, act, weight_decay=0.05), (2, 7, 7)).init(rng, np.float64)
    x = rng.normal(size=(3, 2, 7, 7))
    err = grad_check(net, {"x": x}, squared_error_loss({"y": rng.normal(size=(3, 1, 3, 3))}))
    assert err < 1e-4


@pytest.mark.parametrize("act", ["relu", "tanh", "sigmoid", "linear"])
def test_grad_check_deconv_every_activation(act):
    rng = np.random.default_rng(3)
    net = _single(ConvTranspose2d((2, 3, 3), 2, 3, 2, act, weight_decay=0.05), (2, 3, 3)).init(rng, np.float64)
    x = rng.normal(size=(2, 2, 3, 3))
    err = grad_check(net, {"x": x}, squared_error_loss({"y": rng.normal(size=(2, 2, 7, 7))}))
    assert err < 1e-4


def test_grad_check_multi_input_graph_with_concat_and_reshape():
    rng = np.random.default_rng(4)
    net = Network({"a": (4,), "b": (2,)})
    net.add("la", Dense(4, 3, "relu"), "a").add("lb", Dense(2, 2, "sigmoid"), "b")
    net.concat("cat", ["la", "lb"]).add("h", Dense(5, 4, "tanh"), "cat")
    net.reshape("r", "h", (1, 2, 2)).add("up", ConvTranspose2d((1, 2, 2), 1, 2, 1, "sigmoid"), "r")
    net.add("s", Dense(4, 1, "tanh"), "h")
    net.output("img", "up").output("s", "s").init(rng, np.float64)
    x = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(3, 2))}
    loss = squared_error_loss({"img": rng.uniform(size=(3, 1, 3, 3)), "s": rng.normal(size=(3, 1))})
    assert grad_check(net, x, loss) < 1e-4


def test_grad_check_zero_parameter_network_is_vacuous():
    net = Network({"x": (2,)})
    net.reshape("r", "x", (2, 1)).output("y", "r")
    assert grad_check(net, {"x": np.ones((1, 2))}, squared_error_loss({"y": np.zeros((1, 2, 1))})) == 0.0


def test_conv_output_matches_direct_sum():
    rng = np.random.default_rng(5)
    conv = Conv2d((2, 9, 9), 3, 3, 2, "linear")
    net = _single(conv, (2, 9, 9)).init(rng, np.float64)
    x = rng.normal(size=(2, 2, 9, 9))
    y = net.forward({"x": x})["y"]
    w, b = conv.params["weight"], conv.params["bias"]
    ref = np.zeros_like(y)
    for n in range(2):
        for f in range(3):
            for i in range(4):
                for j in range(4):
                    ref[n, f, i, j] = np.sum(x[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[f]) + b[f]
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)


def test_deconv_is_adjoint_of_conv():
    # <conv(x), y> == <x, deconv(y)> when weights are shared and biases are zero
    rng = np.random.default_rng(6)
    conv = Conv2d((2, 9, 9), 3, 3, 2, "linear")
    deconv = ConvTranspose2d((3, 4, 4), 2, 3, 2, "linear")
    c = _single(conv, (2, 9, 9)).init(rng, np.float64)
    d = _single(deconv, (3, 4, 4)).init(rng, np.float64)
    d.set_parameters({"l.weight": conv.params["weight"], "l.bias": np.zeros(2)})
    x = rng.normal(size=(1, 2, 9, 9))
    y = rng.normal(size=(1, 3, 4, 4))
    lhs = np.sum(c.forward({"x": x})["y"] * y)
    rhs = np.sum(x * d.forward({"x": y})["y"])
    assert lhs == pytest.approx(rhs, rel=1e-12)


# ---------------------------------------------------------------- properties

@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4))
def test_bounded_heads(vals):
    net = Network({"x": (4,)})
    net.add("t", Dense(4, 2, "tanh"), "x").add("s", Dense(4, 2, "sigmoid"), "x")
    net.output("t", "t").output("s", "s").init(np.random.default_rng(0), np.float64)
    out = net.forward({"x": np.array([vals])})
    assert np.all(np.abs(out["t"]) <= 1.0)
    assert np.all((out["s"] >= 0.0) & (out["s"] <= 1.0))


def test_forward_is_deterministic():
    rng = np.random.default_rng(7)
    net = mlp({"a": (6,), "b": (3,)}, [8, 8], 2).init(rng)
    x = {"a": rng.normal(size=(4, 6)), "b": rng.normal(size=(4, 3))}
    assert net.forward(x)["out"].tobytes() == net.forward(x)["out"].tobytes()


def test_glorot_init_bounds():
    net = _single(Dense(10, 30), (10,)).init(np.random.default_rng(0))
    assert np.abs(net.parameters()["l.weight"]).max() <= np.sqrt(6 / 40)


def test_adam_reduces_loss_on_regression():
    rng = np.random.default_rng(8)
    net = mlp({"x": (3,)}, [16], 1).init(rng)
    x = rng.normal(size=(64, 3)).astype(np.float32)
    y = (x @ np.array([[1.0], [-2.0], [0.5]])).astype(np.float32)
    opt = Adam(net.parameters(), lr=1e-2)
    loss = squared_error_loss({"out": y})
    first = None
    for _ in range(200):
        value, g = loss(net.forward({"x": x}))
        first = value if first is None else first
        opt.step(net.backward(g))
    assert value < 0.05 * first


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_bitwise(tmp_path):
    net = mlp({"x": (5,)}, [7], 3).init(np.random.default_rng(9))
    path = tmp_path / "n.ckpt"
    save_checkpoint(path, net_tensors({"net": net}), {"kind": "test"})
    other = mlp({"x": (5,)}, [7], 3).init(np.random.default_rng(10))
    ck = load_checkpoint(path)
    restore({"net": other}, ck)
    assert ck.meta["kind"] == "test"
    for k, v in net.parameters().items():
        assert v.tobytes() == other.parameters()[k].tobytes()
    assert content_hash(net.parameters()) == content_hash(other.parameters())


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\n\n")
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_checkpoint_shape_count_mismatch(tmp_path):
    path = tmp_path / "c.ckpt"
    path.write_bytes(MAGIC + b"tensor w 2,3 5 0\n\n" + np.zeros(6, "<f4").tobytes())
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_checkpoint_truncated_payload(tmp_path):
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, {"w": np.ones((4, 4), np.float32)})
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_checkpoint_unknown_parameter(tmp_path):
    net = mlp({"x": (2,)}, [3], 1).init(np.random.default_rng(0))
    tensors = net_tensors({"net": net})
    tensors["net.ghost.weight"] = np.zeros(2, np.float32)
    path = tmp_path / "u.ckpt"
    save_checkpoint(path, tensors)
    with pytest.raises(UnknownParameterError):
        restore({"net": net}, load_checkpoint(path))
