"""Dense layer primitives with hand-written backward passes.

Tensors are plain numpy arrays. Each ``*_forward`` returns ``(output, cache)``
and the matching ``*_backward`` consumes that cache. Everything is dtype
agnostic: training runs in float32, gradient checks cast to float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np


class ShapeError(ValueError):
    pass


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


class ConvCache(NamedTuple):
    cols: np.ndarray
    w: np.ndarray
    x_shape: tuple
    padded_shape: tuple
    out_hw: tuple
    stride: tuple
    padding: tuple
    batched: bool


def conv2d_forward(x, w, b=None, stride=1, padding=0):
    """Cross-correlation of ``x`` (C,H,W or B,C,H,W) with ``w`` (O,C,kh,kw)."""
    batched = x.ndim == 4
    if not batched:
        if x.ndim != 3:
            raise ShapeError(f"conv2d input must be C×H×W or B×C×H×W, got {x.shape}")
        x = x[None]
    if w.ndim != 4 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"kernel {w.shape} incompatible with input channels {x.shape[1]}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    o, c, kh, kw = w.shape
    bsz, _, h, wd = x.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {h}×{wd} too small for kernel {kh}×{kw} with padding {(ph, pw)}")
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, :(ho - 1) * sh + 1:sh, :(wo - 1) * sw + 1:sw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, c * kh * kw)
    out = cols @ w.reshape(o, -1).T
    if b is not None:
        out += b
    out = out.reshape(bsz, ho, wo, o).transpose(0, 3, 1, 2)
    cache = ConvCache(cols, w, x.shape, xp.shape, (ho, wo), (sh, sw), (ph, pw), batched)
    return (out if batched else out[0]), cache


def conv2d_backward(cache: ConvCache, grad_out):
    """Returns ``(grad_input, grad_kernels, grad_bias)``."""
    if not cache.batched:
        grad_out = grad_out[None]
    o, c, kh, kw = cache.w.shape
    ho, wo = cache.out_hw
    bsz = cache.x_shape[0]
    if grad_out.shape != (bsz, o, ho, wo):
        raise ShapeError(f"grad_out {grad_out.shape} != forward output {(bsz, o, ho, wo)}")
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, o)
    gw = (g.T @ cache.cols).reshape(cache.w.shape)
    gb = g.sum(axis=0)
    gcols = (g @ cache.w.reshape(o, -1)).reshape(bsz, ho, wo, c, kh, kw)
    gxp = np.zeros(cache.padded_shape, dtype=grad_out.dtype)
    sh, sw = cache.stride
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += \
                gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    ph, pw = cache.padding
    h, wd = cache.x_shape[2:]
    gx = gxp[:, :, ph:ph + h, pw:pw + wd]
    return (gx if cache.batched else gx[0]), gw, gb


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(mask, grad_out):
    # subgradient at 0 is 0
    return grad_out * mask


def affine_forward(x, w, b):
    """``x @ w.T + b`` over the last axis of ``x``."""
    if x.shape[-1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"affine: x {x.shape}, W {w.shape}, b {b.shape}")
    return x @ w.T + b, (x, w)


def affine_backward(cache, grad_out):
    x, w = cache
    if grad_out.shape != x.shape[:-1] + (w.shape[0],):
        raise ShapeError("affine: grad_out shape mismatch")
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, w.shape[0])
    return grad_out @ w, g2.T @ x2, g2.sum(axis=0)


def softmax(z, axis=-1):
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    bsz, n_cls = logits.shape
    if labels.shape != (bsz,) or labels.min() < 0 or labels.max() >= n_cls:
        raise ValueError(f"labels must be {bsz} class indices in [0, {n_cls})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(bsz)
    loss = float(np.mean(log_z - shifted[rows, labels]))
    grad = np.exp(shifted - log_z[:, None])
    grad[rows, labels] -= 1
    return loss, grad / bsz


@dataclass
class ParamStore:
    """Named parameters with gradient buffers of the same shape."""

    values: dict = field(default_factory=dict)
    grads: dict = field(default_factory=dict)
    frozen: set = field(default_factory=set)

    def add(self, name, value, trainable=True):
        if name in self.values:
            raise KeyError(f"duplicate parameter {name}")
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        if not trainable:
            self.frozen.add(name)

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values

    def names(self):
        return list(self.values)

    def trainable(self):
        return [n for n in self.values if n not in self.frozen]

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0

    def accumulate(self, name, grad):
        if grad.shape != self.values[name].shape:
            raise ShapeError(f"gradient for {name}: {grad.shape} != {self.values[name].shape}")
        self.grads[name] += grad

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(frozen=set(self.frozen))
        for n, v in self.values.items():
            out.values[n] = v.astype(dtype, copy=True)
            out.grads[n] = np.zeros_like(out.values[n])
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore(frozen=set(self.frozen))
        for n, v in self.values.items():
            out.values[n] = v.copy()
            out.grads[n] = np.zeros_like(v)
        return out

    def global_grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(self.grads[n].astype(np.float64) ** 2))
                                 for n in self.trainable())))


class Layer(NamedTuple):
    """A differentiable map for ``grad_check``.

    ``forward(x, params) -> (out, cache)``;
    ``backward(cache, grad_out) -> (grad_x, {param name: grad})``.
    """

    forward: Callable
    backward: Callable


def grad_check(layer: Layer, x, params: dict | None = None, eps: float = 1e-5,
               rng: np.random.Generator | None = None, max_coords: int = 10_000,
               per_tensor: bool = False):
    """Max relative error of analytic vs central-difference gradients.

    The scalar probed is ``sum(out * R)`` for a fixed random ``R``. Error per
    coordinate is ``|a - n| / max(1, |a| + |n|)``. Tensors with more than
    ``max_coords`` coordinates are subsampled.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.array(x, dtype=np.float64)
    params = {k: np.array(v, dtype=np.float64) for k, v in (params or {}).items()}

    out, cache = layer.forward(x, params)
    proj = rng.standard_normal(np.shape(out))

    def objective():
        o, _ = layer.forward(x, params)
        return float(np.sum(o * proj))

    gx, gparams = layer.backward(cache, proj)
    targets = [("input", x, gx)] + [(k, params[k], gparams[k]) for k in params]
    errors = {}
    for name, arr, analytic in targets:
        if analytic is None:
            continue
        analytic = np.asarray(analytic).reshape(arr.shape)
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = objective()
            flat[i] = orig - eps
            down = objective()
            flat[i] = orig
            num = (up - down) / (2 * eps)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - num) / max(1.0, abs(a) + abs(num)))
        errors[name] = worst
    if per_tensor:
        return errors
    return max(errors.values(), default=0.0)
