import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ipsd.denoiser import DenoiserNet
from ipsd.errors import InvalidArgumentError, SignalFileError, StateError
from ipsd.nn import (
    GRU,
    AdamState,
    BiGRU,
    Conv1d,
    LeakyReLU,
    Linear,
    ReLU,
    adam_step,
    backward,
    grad_check,
    leaky_relu,
    load_checkpoint,
    save_checkpoint,
)
from ipsd.policy import PolicyNet

TOL = 1e-4


def _x(*shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


@pytest.mark.parametrize("layer, x", [
    (lambda r: Conv1d(1, 4, r), _x(1, 17)),
    (lambda r: Conv1d(3, 2, r), _x(3, 9)),
    (lambda r: Conv1d(2, 2, r), _x(2, 1)),
    (lambda r: Linear(5, 3, r), _x(4, 5)),
    (lambda r: GRU(3, 4, False, r), _x(6, 3)),
    (lambda r: GRU(3, 4, True, r), _x(6, 3)),
    (lambda r: BiGRU(3, 4, r), _x(5, 3)),
    (lambda r: LeakyReLU(0.01), _x(3, 11)),
    (lambda r: ReLU(), _x(3, 11)),
], ids=["conv1-4", "conv3-2", "conv-T1", "linear", "gru", "gru-rev", "bigru", "lrelu", "relu"])
def test_layer_gradients(layer, x):
    net = layer(np.random.default_rng(1))
    stats = {}
    err = grad_check(net, x, eps=1e-5, wrt_input=True, stats=stats)
    assert err < TOL
    assert stats["checked"] > 0


def test_conv_packed_segments_match_separate():
    rng = np.random.default_rng(2)
    conv = Conv1d(2, 3, rng)
    a, b = rng.standard_normal((2, 7)), rng.standard_normal((2, 5))
    packed = conv.forward(np.concatenate([a, b], axis=1), [7, 5])
    np.testing.assert_allclose(packed[:, :7], conv.forward(a), atol=1e-12)
    np.testing.assert_allclose(packed[:, 7:], conv.forward(b), atol=1e-12)


def test_conv_packed_gradients():
    rng = np.random.default_rng(3)
    conv = Conv1d(2, 3, rng)
    x = rng.standard_normal((2, 12))
    assert grad_check(conv, x, forward_kwargs={"lengths": [4, 5, 3]}, wrt_input=True) < TOL


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(4)
    conv = Conv1d(2, 3, rng)
    x = rng.standard_normal((2, 6))
    w, b = conv.params["weight"], conv.params["bias"]
    xp = np.pad(x, ((0, 0), (1, 1)))
    ref = np.array([[b[o] + sum(w[o, i, k] * xp[i, t + k] for i in range(2) for k in range(3))
                     for t in range(6)] for o in range(3)])
    np.testing.assert_allclose(conv.forward(x), ref, atol=1e-12)


def test_conv_rejects_bad_segments():
    conv = Conv1d(1, 1)
    with pytest.raises(InvalidArgumentError):
        conv.forward(np.zeros((1, 5)), [2, 2])
    with pytest.raises(InvalidArgumentError):
        conv.forward(np.zeros((2, 5)))


def test_gru_zero_state_and_reverse():
    rng = np.random.default_rng(5)
    fwd = GRU(2, 3, False, rng)
    rev = GRU(2, 3, True)
    rev.params = {k: v.copy() for k, v in fwd.params.items()}
    x = rng.standard_normal((4, 2))
    np.testing.assert_allclose(rev.forward(x), fwd.forward(x[::-1])[::-1], atol=1e-14)
    # first output depends only on x_0 and h_0 = 0
    p = fwd.params
    z = 1 / (1 + np.exp(-(p["W_z"] @ x[0] + p["b_z"])))
    c = np.tanh(p["W_h"] @ x[0] + p["b_h"])
    np.testing.assert_allclose(fwd.forward(x)[0], z * c, atol=1e-14)


def test_backward_without_forward():
    with pytest.raises(StateError):
        Linear(2, 2).backward(np.zeros((1, 2)))
    with pytest.raises(StateError):
        GRU(2, 2).backward(np.zeros((1, 2)))


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_leaky_relu_scalar(v):
    out = LeakyReLU(0.01).forward(np.array([v]))[0]
    assert out == (v if v >= 0 else 0.01 * v)
    assert leaky_relu(v) == out


def test_denoiser_shape_and_size():
    net = DenoiserNet(np.random.default_rng(0))
    # 1*48*3+48 + 48*48*3+48 + 48*3+1
    assert net.n_params() == 7297
    assert net.apply(np.zeros(2560)).shape == (2560,)


def test_full_denoiser_gradient():
    net = DenoiserNet(np.random.default_rng(0))
    stats = {}
    err = grad_check(net, _x(1, 32), stats=stats, max_coords=200, rng=np.random.default_rng(1))
    assert err < TOL
    assert stats["skipped"] < 0.05 * stats["checked"]


def test_full_policy_gradient():
    net = PolicyNet(8, rng=np.random.default_rng(0))
    err = grad_check(net, _x(6, 8), max_coords=12, rng=np.random.default_rng(1), wrt_input=True)
    assert err < TOL


def test_policy_net_shape():
    net = PolicyNet(8)
    assert net.forward(_x(10, 8)).shape == (10, 35)
    assert PolicyNet(4).n_arms == 3


def test_adam_matches_reference():
    p = [np.array([1.0, -2.0])]
    g = [np.array([0.5, -0.1])]
    st_ = AdamState(lr=0.1)
    adam_step(p, g, st_)
    # first step moves each coordinate by lr * sign(g) (up to eps)
    np.testing.assert_allclose(p[0], [0.9, -1.9], atol=1e-6)
    m, v = 0.1 * 0.5, 0.001 * 0.25
    adam_step(p, g, st_)
    m = 0.9 * m + 0.1 * 0.5
    v = 0.999 * v + 0.001 * 0.25
    step = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    np.testing.assert_allclose(p[0][0], 0.9 - step, atol=1e-12)


def test_adam_zero_gradient_is_no_op():
    p = [np.ones(3)]
    adam_step(p, [np.zeros(3)], AdamState())
    assert np.all(p[0] == 1.0)


def test_backward_returns_fresh_grads():
    lin = Linear(2, 2, np.random.default_rng(0))
    x = np.ones((1, 2))
    lin.forward(x)
    g1 = backward(lin, np.ones((1, 2)))
    lin.forward(x)
    g2 = backward(lin, np.ones((1, 2)))
    for a, b in zip(g1, g2):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_roundtrip(tmp_path):
    net = DenoiserNet(np.random.default_rng(0))
    save_checkpoint(tmp_path / "ck", net, {"note": "x"})
    other = load_checkpoint(tmp_path / "ck", DenoiserNet(np.random.default_rng(9)))
    for a, b in zip(net.parameters(), other.parameters()):
        np.testing.assert_array_equal(a, b)
    x = _x(1, 20)
    np.testing.assert_array_equal(net.forward(x), other.forward(x))


def test_checkpoint_layout_mismatch(tmp_path):
    save_checkpoint(tmp_path / "ck", DenoiserNet(channels=4))
    with pytest.raises(InvalidArgumentError):
        load_checkpoint(tmp_path / "ck", DenoiserNet())
    with pytest.raises(SignalFileError):
        load_checkpoint(tmp_path / "missing", DenoiserNet())


def test_astype_float32():
    net = DenoiserNet(np.random.default_rng(0)).astype(np.float32)
    assert all(p.dtype == np.float32 for p in net.parameters())


def test_grad_check_catches_wrong_backward():
    class Scaled(Linear):
        def backward(self, grad_out):
            dx = super().backward(grad_out)
            self.grads["weight"] *= 1.001
            return dx

    net = Scaled(4, 3, np.random.default_rng(0))
    assert grad_check(net, _x(5, 4)) > 5e-4
