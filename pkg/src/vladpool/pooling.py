"""Utterance-level pooling heads: NetVLAD, GhostVLAD, statistics and average.

All ops take an N×D feature map (or a B×N×D batch) and return a fixed-length
vector whose size does not depend on N.

VLAD output layout is cluster-major: entry ``k * D + j`` holds the residual
sum of cluster ``k`` along descriptor dimension ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

STATS_EPS = 1e-5
NORM_EPS = 1e-12


@dataclass
class VladParams:
    """Assignment weights/biases for K real + G ghost clusters; centroids for real ones only."""

    w: np.ndarray  # (K+G, D)
    b: np.ndarray  # (K+G,)
    c: np.ndarray  # (K, D)

    def __post_init__(self):
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise nn.ShapeError(f"assignment params: w {self.w.shape}, b {self.b.shape}")
        if self.c.ndim != 2 or self.c.shape[1] != self.w.shape[1] or self.c.shape[0] > self.w.shape[0]:
            raise nn.ShapeError(f"centroids {self.c.shape} incompatible with w {self.w.shape}")

    @property
    def k(self) -> int:
        return self.c.shape[0]

    @property
    def g(self) -> int:
        return self.w.shape[0] - self.c.shape[0]

    @property
    def d(self) -> int:
        return self.w.shape[1]

    @classmethod
    def init(cls, k, g, d, rng, dtype=np.float32, scale=1.0):
        w = rng.standard_normal((k + g, d)) * scale / np.sqrt(d)
        c = rng.standard_normal((k, d)) * scale / np.sqrt(d)
        return cls(w.astype(dtype), np.zeros(k + g, dtype=dtype), c.astype(dtype))


def _batch(x):
    if x.ndim == 2:
        return x[None], False
    if x.ndim == 3:
        return x, True
    raise nn.ShapeError(f"feature map must be N×D or B×N×D, got {x.shape}")


def soft_assign(features, params: VladParams):
    """Row-stochastic N×(K+G) softmax assignment over all clusters."""
    x, batched = _batch(features)
    if x.shape[-1] != params.d:
        raise nn.ShapeError(f"feature dim {x.shape[-1]} != cluster dim {params.d}")
    a = nn.softmax(x @ params.w.T + params.b, axis=-1)
    return a if batched else a[0]


def _l2n_forward(u):
    n = np.sqrt(np.sum(u * u, axis=-1, keepdims=True) + NORM_EPS ** 2)
    return u / n, (u, n)


def _l2n_backward(cache, g):
    u, n = cache
    return g / n - u * np.sum(u * g, axis=-1, keepdims=True) / n ** 3


def vlad_forward(features, params: VladParams, normalize=True):
    """Shared NetVLAD/GhostVLAD forward; ghost clusters only enter the softmax."""
    x, batched = _batch(features)
    a = soft_assign(x, params)
    ar = a[..., :params.k]
    # V[k, j] = sum_i a[i, k] * (x[i, j] - c[k, j])
    v = ar.transpose(0, 2, 1) @ x - ar.sum(axis=1)[..., None] * params.c
    cache = {"x": x, "a": a, "params": params, "batched": batched, "normalize": normalize}
    if normalize:
        v, cache["intra"] = _l2n_forward(v)
        flat, cache["glob"] = _l2n_forward(v.reshape(v.shape[0], -1))
    else:
        flat = v.reshape(v.shape[0], -1)
    return (flat if batched else flat[0]), cache


def netvlad_forward(features, params: VladParams, normalize=True):
    if params.g != 0:
        raise ValueError(f"NetVLAD takes no ghost clusters (got G={params.g})")
    return vlad_forward(features, params, normalize)


def ghostvlad_forward(features, params: VladParams, normalize=True):
    return vlad_forward(features, params, normalize)


def vlad_backward(cache, grad_pooled):
    """Returns ``(grad_features, grad_w, grad_b, grad_c)``."""
    x, a, p = cache["x"], cache["a"], cache["params"]
    bsz, _, d = x.shape
    g = grad_pooled if cache["batched"] else grad_pooled[None]
    if g.shape != (bsz, p.k * d):
        raise nn.ShapeError(f"grad_pooled {g.shape} != {(bsz, p.k * d)}")
    if cache["normalize"]:
        g = _l2n_backward(cache["glob"], g)
        g = _l2n_backward(cache["intra"], g.reshape(bsz, p.k, d))
    else:
        g = g.reshape(bsz, p.k, d)
    ar = a[..., :p.k]
    mass = ar.sum(axis=1)
    grad_c = -np.einsum("bk,bkj->kj", mass, g)
    gx = ar @ g
    # d/dA[i,k] = sum_j g[k,j] (x[i,j] - c[k,j]); ghost columns get no direct gradient
    ga = np.zeros_like(a)
    ga[..., :p.k] = x @ g.transpose(0, 2, 1) - np.sum(g * p.c, axis=-1)[:, None, :]
    gs = a * (ga - np.sum(a * ga, axis=-1, keepdims=True))
    grad_w = np.einsum("bnk,bnd->kd", gs, x)
    grad_b = gs.sum(axis=(0, 1))
    gx = gx + gs @ p.w
    return (gx if cache["batched"] else gx[0]), grad_w, grad_b, grad_c


def stats_pool(features, eps=STATS_EPS):
    """Per-dimension mean followed by sqrt(population variance + eps)."""
    x, batched = _batch(features)
    mu = x.mean(axis=1)
    centred = x - mu[:, None]
    sd = np.sqrt(np.mean(centred ** 2, axis=1) + eps)
    out = np.concatenate([mu, sd], axis=-1)
    return (out if batched else out[0]), (centred, sd, batched)


def stats_pool_backward(cache, grad_pooled):
    centred, sd, batched = cache
    g = grad_pooled if batched else grad_pooled[None]
    n, d = centred.shape[1:]
    gmu, gsd = g[:, :d], g[:, d:]
    gx = gmu[:, None] / n + centred * (gsd / (n * sd))[:, None]
    return gx if batched else gx[0]


def avg_pool(features):
    x, batched = _batch(features)
    out = x.mean(axis=1)
    return (out if batched else out[0]), (x.shape, batched)


def avg_pool_backward(cache, grad_pooled):
    shape, batched = cache
    g = grad_pooled if batched else grad_pooled[None]
    gx = np.broadcast_to(g[:, None] / shape[1], shape).copy()
    return gx if batched else gx[0]


# --- uniform interface over param dicts, used by the model and grad checks --

def pool_param_names(kind: str) -> list[str]:
    return ["pool.w", "pool.b", "pool.c"] if kind in ("netvlad", "ghostvlad") else []


def pool_forward(kind: str, features, params, normalize=True):
    if kind == "avg":
        return avg_pool(features)
    if kind == "stats":
        return stats_pool(features)
    vp = VladParams(params["pool.w"], params["pool.b"], params["pool.c"])
    if kind == "netvlad":
        return netvlad_forward(features, vp, normalize)
    if kind == "ghostvlad":
        return ghostvlad_forward(features, vp, normalize)
    raise ValueError(f"unknown pooling kind {kind!r}")


def pool_backward(kind: str, cache, grad_pooled):
    """Returns ``(grad_features, {param name: grad})``."""
    if kind == "avg":
        return avg_pool_backward(cache, grad_pooled), {}
    if kind == "stats":
        return stats_pool_backward(cache, grad_pooled), {}
    gx, gw, gb, gc = vlad_backward(cache, grad_pooled)
    return gx, {"pool.w": gw, "pool.b": gb, "pool.c": gc}


def layer(kind: str, normalize=True) -> nn.Layer:
    return nn.Layer(lambda x, p: pool_forward(kind, x, p, normalize),
                    lambda c, g: pool_backward(kind, c, g))
