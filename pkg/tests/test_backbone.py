import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vladpool import backbone, nn
from vladpool.config import BackboneConfig, ConfigError


@pytest.fixture(scope="module")
def default_params():
    store = nn.ParamStore()
    backbone.init_params(store, BackboneConfig(), np.random.default_rng(0))
    return store.values


def shape_oracle(t, cfg):
    for k, s, p in zip(cfg.time_kernel, cfg.time_stride, cfg.time_pad):
        t = (t + 2 * p - k) // s + 1
    return t


def test_paper_geometry_maps_500_frames_to_32(default_params):
    x = np.random.default_rng(1).standard_normal((257, 500)).astype(np.float32)
    feats, _ = backbone.extract(x, default_params, BackboneConfig())
    assert feats.shape == (32, 64)


def test_doubling_duration_doubles_n(default_params):
    x = np.random.default_rng(1).standard_normal((257, 1000)).astype(np.float32)
    feats, _ = backbone.extract(x, default_params, BackboneConfig())
    assert feats.shape == (shape_oracle(1000, BackboneConfig()), 64) == (64, 64)


def test_zero_input_zero_bias_gives_zero_features(default_params):
    feats, _ = backbone.extract(np.zeros((257, 120), np.float32), default_params, BackboneConfig())
    assert not feats.any()


def test_n_monotone_and_d_constant():
    cfg = BackboneConfig()
    ns = [cfg.n_descriptors(t) for t in range(1, 3000)]
    assert all(a <= b for a, b in zip(ns, ns[1:]))
    assert ns[-1] == shape_oracle(2999, cfg)


def test_too_short_input_is_explicit():
    cfg = BackboneConfig(time_kernel=(5, 5, 5, 5), time_pad=(0, 0, 0, 0))
    store = nn.ParamStore()
    backbone.init_params(store, cfg, np.random.default_rng(0))
    with pytest.raises(backbone.InputTooShortError, match=str(cfg.min_frames)):
        backbone.extract(np.zeros((257, cfg.min_frames - 1), np.float32), store.values, cfg)
    feats, _ = backbone.extract(np.zeros((257, cfg.min_frames), np.float32), store.values, cfg)
    assert feats.shape[0] == 1


def test_frequency_must_collapse():
    with pytest.raises(ConfigError):
        BackboneConfig(freq_stride=(2, 2, 2, 1))


def test_time_shift_covariance(default_params):
    cfg = BackboneConfig()
    stride = cfg.time_downsample
    x = np.random.default_rng(5).standard_normal((257, 400)).astype(np.float32)
    a, _ = backbone.extract(x, default_params, cfg)
    b, _ = backbone.extract(x[:, stride:], default_params, cfg)
    # rows whose receptive field avoids the padded edges
    assert np.max(np.abs(b[3:-3] - a[4:4 + len(b) - 6])) < 1e-5


def test_single_block_backward_is_conv_backward():
    cfg = BackboneConfig(in_rows=5, channels=(3,), freq_kernel=(5,), freq_stride=(1,), freq_pad=(0,),
                         time_kernel=(3,), time_stride=(2,), time_pad=(1,))
    rng = np.random.default_rng(0)
    store = nn.ParamStore()
    backbone.init_params(store, cfg, rng, np.float64)
    x = rng.standard_normal((5, 12))
    feats, cache = backbone.extract(x, store.values, cfg)
    g = rng.standard_normal(feats.shape)
    gx, grads = backbone.extract_backward(cache, g, cfg)

    conv_out, conv_cache = nn.conv2d_forward(x[None], store["backbone.conv0.w"], store["backbone.conv0.b"],
                                             stride=(1, 2), padding=(0, 1))
    g_conv = g.T[:, None, :] * (conv_out > 0)
    ref_x, ref_w, ref_b = nn.conv2d_backward(conv_cache, g_conv)
    assert np.allclose(gx, ref_x[0]) and np.allclose(grads["backbone.conv0.w"], ref_w)
    assert np.allclose(grads["backbone.conv0.b"], ref_b)


def test_zero_upstream_gives_zero_param_grads(default_params):
    x = np.random.default_rng(2).standard_normal((257, 64)).astype(np.float32)
    feats, cache = backbone.extract(x, default_params, BackboneConfig())
    _, grads = backbone.extract_backward(cache, np.zeros_like(feats), BackboneConfig())
    assert all(not g.any() for g in grads.values())


THREE_BLOCK = BackboneConfig(in_rows=11, channels=(2, 3, 4), freq_kernel=(3, 3, 3), freq_stride=(2, 2, 1),
                             freq_pad=(1, 1, 0), time_kernel=(3, 3, 3), time_stride=(2, 1, 2),
                             time_pad=(1, 1, 1))


@pytest.mark.parametrize("seed", range(20))
def test_three_block_gradients(seed):
    rng = np.random.default_rng(seed)
    store = nn.ParamStore()
    backbone.init_params(store, THREE_BLOCK, rng, np.float64)
    for name in store.names():
        if name.endswith(".b"):
            store.values[name] = rng.standard_normal(store.values[name].shape) * 0.1
    err = nn.grad_check(backbone.layer(THREE_BLOCK), rng.standard_normal((11, 24)), store.values,
                        eps=1e-6, rng=rng)
    assert err < 1e-6


@settings(max_examples=10, deadline=None)
@given(t=st.integers(16, 64), seed=st.integers(0, 100))
def test_tiny_backbone_gradients_any_width(t, seed):
    rng = np.random.default_rng(seed)
    store = nn.ParamStore()
    backbone.init_params(store, backbone.TINY, rng, np.float64)
    err = nn.grad_check(backbone.layer(backbone.TINY), rng.standard_normal((9, t)), store.values,
                        eps=1e-6, rng=rng, max_coords=200)
    assert err < 1e-6
