import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vladpool import gradcheck, nn


def naive_conv(x, w, b, stride, pad):
    """Six nested loops, no vectorisation."""
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    xp = np.zeros((c, h + 2 * ph, wd + 2 * pw))
    xp[:, ph:ph + h, pw:pw + wd] = x
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                acc = b[oc]
                for ic in range(c):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += xp[ic, i * sh + di, j * sw + dj] * w[oc, ic, di, dj]
                out[oc, i, j] = acc
    return out


def test_conv_scalar_kernel():
    out, _ = nn.conv2d_forward(np.ones((1, 3, 3)), np.full((1, 1, 1, 1), 2.0))
    assert np.array_equal(out, np.full((1, 3, 3), 2.0))


def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((1, 4, 5))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1
    out, _ = nn.conv2d_forward(x, k, padding=1)
    assert np.array_equal(out, x)


@pytest.mark.parametrize("stride,pad", [((1, 1), (0, 0)), ((2, 1), (1, 2)), ((2, 3), (0, 1))])
def test_conv_matches_loop_oracle(stride, pad):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 5, 5)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 2)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    out, _ = nn.conv2d_forward(x, w, b, stride, pad)
    ref = naive_conv(x.astype(np.float64), w, b, stride, pad)
    assert out.shape == ref.shape
    assert np.max(np.abs(out - ref)) < 1e-5


def test_conv_output_extent_formula():
    x = np.zeros((1, 1, 17, 23))
    out, _ = nn.conv2d_forward(x, np.zeros((2, 1, 5, 3)), stride=(4, 2), padding=(2, 1))
    assert out.shape == (1, 2, (17 + 4 - 5) // 4 + 1, (23 + 2 - 3) // 2 + 1)


def test_conv_shape_errors():
    with pytest.raises(nn.ShapeError):
        nn.conv2d_forward(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)))
    with pytest.raises(nn.ShapeError):
        nn.conv2d_forward(np.zeros((1, 2, 2)), np.zeros((1, 1, 3, 3)))


def test_conv_backward_zero_grad():
    rng = np.random.default_rng(2)
    out, cache = nn.conv2d_forward(rng.standard_normal((2, 5, 5)), rng.standard_normal((3, 2, 3, 3)))
    gx, gw, gb = nn.conv2d_backward(cache, np.zeros_like(out))
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_backward_1x1_closed_form():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 4, 6))
    out, cache = nn.conv2d_forward(x, np.array([[[[1.7]]]]))
    g = rng.standard_normal(out.shape)
    _, gw, _ = nn.conv2d_backward(cache, g)
    assert gw[0, 0, 0, 0] == pytest.approx(np.sum(x * g), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_conv_linear_in_input(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 2, 6, 6)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    lhs, _ = nn.conv2d_forward(np.float32(a) * x + np.float32(b) * y, w, stride=2, padding=1)
    fx, _ = nn.conv2d_forward(x, w, stride=2, padding=1)
    fy, _ = nn.conv2d_forward(y, w, stride=2, padding=1)
    assert np.max(np.abs(lhs - (a * fx + b * fy))) < 1e-5 * max(1.0, np.max(np.abs(lhs)))


def test_relu_values_and_zero_subgradient():
    out, mask = nn.relu_forward(np.array([-1.0, 0.0, 2.0]))
    assert np.array_equal(out, [0, 0, 2])
    assert np.array_equal(nn.relu_backward(mask, np.ones(3)), [0, 0, 1])


def test_affine_identity():
    x = np.random.default_rng(0).standard_normal((3, 4))
    out, _ = nn.affine_forward(x, np.eye(4), np.zeros(4))
    assert np.array_equal(out, x)


def test_xent_uniform_logits():
    loss, grad = nn.softmax_xent(np.zeros((3, 7)), [0, 3, 6])
    assert loss == pytest.approx(math.log(7), abs=1e-12)
    assert loss == pytest.approx(1.9459, abs=1e-4)


def test_xent_saturated_no_overflow():
    logits = np.zeros((1, 7))
    logits[0, 2] = 1000.0
    loss, grad = nn.softmax_xent(logits, [2])
    assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-12)
    assert np.max(np.abs(grad)) < 1e-12


def test_xent_bad_label():
    with pytest.raises(ValueError):
        nn.softmax_xent(np.zeros((2, 3)), [0, 3])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 50))
def test_xent_nonnegative_and_rows_sum_to_zero(seed, scale):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((4, 7)) * scale
    loss, grad = nn.softmax_xent(logits, rng.integers(0, 7, 4))
    assert loss >= 0
    assert np.max(np.abs(grad.sum(axis=1))) < 1e-6


def test_grad_check_exact_on_linear_layer():
    rng = np.random.default_rng(0)
    err = nn.grad_check(gradcheck.AFFINE, rng.standard_normal((3, 4)),
                        {"w": rng.standard_normal((2, 4)), "b": rng.standard_normal(2)})
    assert err < 1e-8


def test_grad_check_relu_away_from_kink():
    x = np.random.default_rng(1).standard_normal(20)
    x = np.sign(x) * (np.abs(x) + 1e-3)
    assert nn.grad_check(gradcheck.RELU, x) < 1e-8


def test_grad_check_detects_a_wrong_backward():
    bad = nn.Layer(lambda x, p: (x ** 2, x), lambda c, g: (g * c, {}))  # missing factor 2
    assert nn.grad_check(bad, np.array([1.0, 2.0])) > 0.1


@pytest.mark.parametrize("seed", range(20))
def test_layer_gradients(seed):
    for name, layer, x, params, tol, *eps in gradcheck.checks(seed):
        if name in ("conv2d", "relu", "affine", "softmax_xent"):
            assert nn.grad_check(layer, x, params) < tol, name


def test_param_store_accumulate_and_copy():
    store = nn.ParamStore()
    store.add("a", np.zeros(3, dtype=np.float32))
    store.accumulate("a", np.ones(3, dtype=np.float32))
    store.accumulate("a", np.ones(3, dtype=np.float32))
    assert np.array_equal(store.grads["a"], [2, 2, 2])
    with pytest.raises(nn.ShapeError):
        store.accumulate("a", np.ones(2))
    with pytest.raises(KeyError):
        store.add("a", np.zeros(1))
    c = store.copy()
    assert c["a"].dtype == np.float32 and c["a"] is not store["a"]
