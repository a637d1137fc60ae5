"""Fully-convolutional frame-level feature extractor.

A plain stack of strided conv + ReLU blocks. The frequency axis is collapsed
to height 1 by the last block and the remaining time axis is unfolded into N
local descriptors of dimension D (the final channel count).
"""

from __future__ import annotations

import numpy as np

from . import nn
from .config import BackboneConfig


class InputTooShortError(ValueError):
    pass


def param_names(cfg: BackboneConfig) -> list[str]:
    return [f"backbone.conv{i}.{p}" for i in range(cfg.n_blocks) for p in ("w", "b")]


def init_params(store: nn.ParamStore, cfg: BackboneConfig, rng: np.random.Generator,
                dtype=np.float32) -> None:
    c_in = 1
    for i, c_out in enumerate(cfg.channels):
        kh, kw = cfg.freq_kernel[i], cfg.time_kernel[i]
        fan_in = c_in * kh * kw
        w = rng.standard_normal((c_out, c_in, kh, kw)) * np.sqrt(2.0 / fan_in)
        store.add(f"backbone.conv{i}.w", w.astype(dtype))
        store.add(f"backbone.conv{i}.b", np.zeros(c_out, dtype=dtype))
        c_in = c_out


def extract(spec: np.ndarray, params, cfg: BackboneConfig):
    """Map an F×T (or B×F×T) spectrogram to N×D (or B×N×D) descriptors."""
    batched = spec.ndim == 3
    x = spec if batched else spec[None]
    if x.shape[1] != cfg.in_rows:
        raise nn.ShapeError(f"backbone expects {cfg.in_rows} input rows, got {x.shape[1]}")
    if x.shape[2] < cfg.min_frames:
        raise InputTooShortError(
            f"input has {x.shape[2]} frames; backbone needs at least {cfg.min_frames}")
    x = x[:, None]
    caches = []
    for i in range(cfg.n_blocks):
        x, conv_cache = nn.conv2d_forward(
            x, params[f"backbone.conv{i}.w"], params[f"backbone.conv{i}.b"],
            stride=(cfg.freq_stride[i], cfg.time_stride[i]),
            padding=(cfg.freq_pad[i], cfg.time_pad[i]))
        x, mask = nn.relu_forward(x)
        caches.append((conv_cache, mask))
    feats = x[:, :, 0, :].transpose(0, 2, 1)
    return (feats if batched else feats[0]), (caches, batched)


def extract_backward(cache, grad_feats, cfg: BackboneConfig):
    """Returns ``(grad_spec, {param name: grad})``."""
    caches, batched = cache
    g = grad_feats if batched else grad_feats[None]
    g = g.transpose(0, 2, 1)[:, :, None, :]
    grads = {}
    for i in reversed(range(cfg.n_blocks)):
        conv_cache, mask = caches[i]
        g = nn.relu_backward(mask, g)
        g, gw, gb = nn.conv2d_backward(conv_cache, g)
        grads[f"backbone.conv{i}.w"] = gw
        grads[f"backbone.conv{i}.b"] = gb
    g = g[:, 0]
    return (g if batched else g[0]), grads


def layer(cfg: BackboneConfig) -> nn.Layer:
    return nn.Layer(lambda x, p: extract(x, p, cfg),
                    lambda c, g: extract_backward(c, g, cfg))


TINY = BackboneConfig(in_rows=9, channels=(3, 4), freq_kernel=(3, 5), freq_stride=(2, 1),
                      freq_pad=(1, 0), time_kernel=(3, 3), time_stride=(2, 2), time_pad=(1, 1))

# Same schedule with wider channels (descriptor dim 512).
WIDE = BackboneConfig(channels=(32, 64, 128, 512))
