"""Finite-difference gradient suite over every differentiable component (float64)."""

from __future__ import annotations

import dataclasses

import numpy as np

from . import backbone, model, nn, pooling
from .config import FrontendConfig, ModelConfig

LAYER_TOL = 1e-6
MODEL_TOL = 1e-5
# smaller step for ReLU stacks: fewer hidden pre-activations straddle a kink
KINK_EPS = 1e-6

TINY_MODEL = ModelConfig(frontend=FrontendConfig(n_spectral_bins=8), backbone=backbone.TINY,
                         pooling_kind="ghostvlad", k=2, g=2, embedding_dim=5, n_classes=3)


def _conv_layer(stride, padding):
    def fwd(x, p):
        return nn.conv2d_forward(x, p["w"], p["b"], stride, padding)

    def bwd(c, g):
        gx, gw, gb = nn.conv2d_backward(c, g)
        return gx, {"w": gw, "b": gb}

    return nn.Layer(fwd, bwd)


RELU = nn.Layer(lambda x, p: nn.relu_forward(x), lambda c, g: (nn.relu_backward(c, g), {}))
AFFINE = nn.Layer(lambda x, p: nn.affine_forward(x, p["w"], p["b"]),
                  lambda c, g: (lambda r: (r[0], {"w": r[1], "b": r[2]}))(nn.affine_backward(c, g)))


def _xent_layer(labels):
    def fwd(x, p):
        loss, grad = nn.softmax_xent(x, labels)
        return np.array(loss), grad

    return nn.Layer(fwd, lambda grad, g: (grad * g, {}))


def _vlad_params(rng, k, g, d):
    vp = pooling.VladParams.init(k, g, d, rng, np.float64, scale=2.0)
    return {"pool.w": vp.w, "pool.b": rng.standard_normal(k + g), "pool.c": vp.c}


def _model_layer(cfg, labels, frozen):
    inner = model.loss_layer(cfg, labels)
    return nn.Layer(lambda x, p: inner.forward(x, {**p, **frozen}), inner.backward)


def checks(seed: int):
    """Yield ``(name, layer, input, params, tolerance[, eps])`` for one random seed."""
    rng = np.random.default_rng(seed)
    yield ("conv2d", _conv_layer((2, 1), (1, 2)), rng.standard_normal((2, 3, 6, 5)),
           {"w": rng.standard_normal((4, 3, 3, 2)), "b": rng.standard_normal(4)}, LAYER_TOL)
    x = rng.standard_normal((4, 6))
    yield "relu", RELU, np.sign(x) * (np.abs(x) + 0.1), {}, LAYER_TOL
    yield ("affine", AFFINE, rng.standard_normal((4, 6)),
           {"w": rng.standard_normal((5, 6)), "b": rng.standard_normal(5)}, LAYER_TOL)
    yield "softmax_xent", _xent_layer(rng.integers(0, 7, 4)), rng.standard_normal((4, 7)) * 3, {}, LAYER_TOL
    n, d = int(rng.integers(1, 9)), int(rng.integers(1, 6))
    feats = rng.standard_normal((n, d))
    yield "avg_pool", pooling.layer("avg"), feats, {}, LAYER_TOL
    yield "stats_pool", pooling.layer("stats"), feats, {}, LAYER_TOL
    for norm in (False, True):
        tag = "norm" if norm else "raw"
        yield f"netvlad[{tag}]", pooling.layer("netvlad", norm), feats, _vlad_params(rng, 3, 0, d), LAYER_TOL
        yield f"ghostvlad[G=2,{tag}]", pooling.layer("ghostvlad", norm), feats, _vlad_params(rng, 3, 2, d), LAYER_TOL
    store = nn.ParamStore()
    backbone.init_params(store, backbone.TINY, rng, np.float64)
    for name in store.names():
        if name.endswith(".b"):
            store.values[name] = rng.standard_normal(store.values[name].shape) * 0.1
    yield "backbone", backbone.layer(backbone.TINY), rng.standard_normal((9, 16)), store.values, LAYER_TOL, KINK_EPS
    for kind in ("avg", "stats", "netvlad", "ghostvlad"):
        cfg = dataclasses.replace(TINY_MODEL, pooling_kind=kind, g=2 if kind == "ghostvlad" else 0)
        store = model.init_model(cfg, rng, np.float64)
        frozen = {k: store.values[k] for k in store.frozen}
        params = {k: v for k, v in store.values.items() if k not in store.frozen}
        yield (f"model[{kind}]", _model_layer(cfg, rng.integers(0, 3, 2), frozen),
               rng.standard_normal((2, 9, 16)), params, MODEL_TOL, KINK_EPS)


def run_suite(seeds=range(20)) -> dict[str, tuple[float, float]]:
    """Max relative error per check over all seeds, with its tolerance."""
    worst: dict[str, tuple[float, float]] = {}
    for seed in seeds:
        rng = np.random.default_rng(10_000 + seed)
        for name, layer, x, params, tol, *eps in checks(seed):
            err = nn.grad_check(layer, x, params, eps=eps[0] if eps else 1e-5, rng=rng)
            prev = worst.get(name, (0.0, tol))[0]
            worst[name] = (max(prev, err), tol)
    return worst
