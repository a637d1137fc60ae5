"""LID model: input normalisation -> backbone -> pooling -> projection -> classes.

Checkpoint file layout (format version 1)::

    vladpool-checkpoint
    format_version = 1
    [config]
    <section.key = value lines>
    [meta]
    <key = value lines>
    [tensors]
    <name> <dtype> <d0xd1x...> <byte offset> <byte count>
    end_header
    <little-endian float32 payload, tensors concatenated in directory order>
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backbone, nn, pooling
from .config import ConfigError, ModelConfig

FORMAT_VERSION = 1
MAGIC = "vladpool-checkpoint"
END_HEADER = b"end_header\n"


class CheckpointError(ValueError):
    """Corrupt, truncated or otherwise unreadable checkpoint."""


class CheckpointVersionError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def init_model(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> nn.ParamStore:
    store = nn.ParamStore()
    f = cfg.frontend.n_rows
    store.add("input.mean", np.zeros(f, dtype=dtype), trainable=False)
    store.add("input.scale", np.ones(f, dtype=dtype), trainable=False)
    backbone.init_params(store, cfg.backbone, rng, dtype)
    d = cfg.backbone.descriptor_dim
    if cfg.pooling_kind in ("netvlad", "ghostvlad"):
        vp = pooling.VladParams.init(cfg.k, cfg.g, d, rng, dtype)
        store.add("pool.w", vp.w)
        store.add("pool.b", vp.b)
        store.add("pool.c", vp.c)
    p, e = cfg.pooled_dim, cfg.embedding_dim
    store.add("proj.w", (rng.standard_normal((e, p)) * np.sqrt(2.0 / p)).astype(dtype))
    store.add("proj.b", np.zeros(e, dtype=dtype))
    store.add("cls.w", (rng.standard_normal((cfg.n_classes, e)) * np.sqrt(1.0 / e)).astype(dtype))
    store.add("cls.b", np.zeros(cfg.n_classes, dtype=dtype))
    return store


def expected_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    store = init_model(cfg, np.random.default_rng(0))
    return {n: v.shape for n, v in store.values.items()}


def set_input_normalization(store: nn.ParamStore, specs) -> None:
    """Per-row mean / inverse std over all frames of the given spectrograms."""
    data = np.concatenate([np.asarray(s) for s in specs], axis=1).astype(np.float64)
    mean = data.mean(axis=1)
    std = data.std(axis=1)
    store.values["input.mean"][...] = mean
    store.values["input.scale"][...] = 1.0 / np.maximum(std, 1e-3)


def forward(spec, params, cfg: ModelConfig):
    """Returns ``(logits, embedding, cache)`` for an F×T or B×F×T input."""
    x = np.asarray(spec)
    if x.shape[-2] != cfg.frontend.n_rows:
        raise nn.ShapeError(f"model expects {cfg.frontend.n_rows} input rows, got {x.shape[-2]}")
    dtype = params["proj.w"].dtype
    x = ((x - params["input.mean"][:, None]) * params["input.scale"][:, None]).astype(dtype, copy=False)
    feats, bb_cache = backbone.extract(x, params, cfg.backbone)
    pooled, pool_cache = pooling.pool_forward(cfg.pooling_kind, feats, params, cfg.normalize)
    z, proj_cache = nn.affine_forward(pooled, params["proj.w"], params["proj.b"])
    emb, mask = nn.relu_forward(z)
    logits, cls_cache = nn.affine_forward(emb, params["cls.w"], params["cls.b"])
    cache = (bb_cache, pool_cache, proj_cache, mask, cls_cache)
    return logits, emb, cache


def backward_from_logits(cache, grad_logits, cfg: ModelConfig):
    """Returns ``(grad_spec, {param name: grad})`` given dL/dlogits."""
    bb_cache, pool_cache, proj_cache, mask, cls_cache = cache
    grads = {}
    g, grads["cls.w"], grads["cls.b"] = nn.affine_backward(cls_cache, grad_logits)
    g = nn.relu_backward(mask, g)
    g, grads["proj.w"], grads["proj.b"] = nn.affine_backward(proj_cache, g)
    g, pool_grads = pooling.pool_backward(cfg.pooling_kind, pool_cache, g)
    grads.update(pool_grads)
    g, bb_grads = backbone.extract_backward(bb_cache, g, cfg.backbone)
    grads.update(bb_grads)
    return g, grads


def backward(cache, labels, logits, store: nn.ParamStore, cfg: ModelConfig) -> float:
    """Softmax cross-entropy on batched ``logits``; accumulates grads into ``store``."""
    loss, grad_logits = nn.softmax_xent(logits, labels)
    _, grads = backward_from_logits(cache, grad_logits, cfg)
    for name, g in grads.items():
        store.accumulate(name, g.astype(store.grads[name].dtype, copy=False))
    return loss


def loss_layer(cfg: ModelConfig, labels) -> nn.Layer:
    """Whole model + mean cross-entropy as a scalar-output layer for grad_check."""
    labels = np.asarray(labels)

    def fwd(x, p):
        logits, _, cache = forward(x, p, cfg)
        loss, grad = nn.softmax_xent(logits, labels)
        return np.array(loss), (cache, grad)

    def bwd(c, g):
        cache, grad = c
        gx, grads = backward_from_logits(cache, grad * g, cfg)
        return gx, grads

    return nn.Layer(fwd, bwd)


@dataclass
class Checkpoint:
    config: ModelConfig
    params: nn.ParamStore
    meta: dict = field(default_factory=dict)
    labels: list[str] = field(default_factory=list)

    def predict(self, spec):
        logits, emb, _ = forward(spec, self.params.values, self.config)
        return logits, emb


def save(ckpt: Checkpoint, path) -> None:
    lines = [MAGIC, f"format_version = {FORMAT_VERSION}", "[config]"]
    lines += [f"{k} = {v}" for k, v in sorted(ckpt.config.to_flat().items())]
    lines.append("[meta]")
    meta = dict(ckpt.meta)
    if ckpt.labels:
        meta["labels"] = ",".join(ckpt.labels)
    lines += [f"{k} = {v}" for k, v in sorted(meta.items())]
    lines.append("[tensors]")
    payload = []
    offset = 0
    for name, value in ckpt.params.values.items():
        raw = np.ascontiguousarray(value, dtype="<f4").tobytes()
        shape = "x".join(str(s) for s in value.shape) or "scalar"
        lines.append(f"{name} float32 {shape} {offset} {len(raw)}")
        payload.append(raw)
        offset += len(raw)
    header = ("\n".join(lines) + "\n").encode() + END_HEADER
    Path(path).write_bytes(header + b"".join(payload))


def _kv(line: str) -> tuple[str, str]:
    key, sep, value = line.partition("=")
    if not sep:
        raise CheckpointError(f"corrupt checkpoint header line: {line!r}")
    return key.strip(), value.strip()


def load(path, config: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint; tensors are validated against ``config`` (default: the embedded one)."""
    blob = Path(path).read_bytes()
    end = blob.find(END_HEADER)
    if not blob.startswith(MAGIC.encode()) or end < 0:
        raise CheckpointError(f"{path}: not a checkpoint or header truncated")
    try:
        header = blob[:end].decode().splitlines()
    except UnicodeDecodeError:
        raise CheckpointError(f"{path}: corrupt header") from None
    payload = memoryview(blob)[end + len(END_HEADER):]

    if len(header) < 2:
        raise CheckpointError(f"{path}: corrupt header")
    key, version = _kv(header[1])
    if key != "format_version":
        raise CheckpointError(f"{path}: missing format_version")
    if version != str(FORMAT_VERSION):
        raise CheckpointVersionError(f"{path}: format_version {version} unsupported (expected {FORMAT_VERSION})")

    section = None
    flat, meta, directory = {}, {}, []
    for line in header[2:]:
        if line in ("[config]", "[meta]", "[tensors]"):
            section = line
        elif section == "[config]":
            k, v = _kv(line)
            flat[k] = v
        elif section == "[meta]":
            k, v = _kv(line)
            meta[k] = v
        elif section == "[tensors]":
            parts = line.split()
            if len(parts) != 5 or parts[1] != "float32":
                raise CheckpointError(f"{path}: bad tensor directory line {line!r}")
            directory.append(parts)
        elif line.strip():
            raise CheckpointError(f"{path}: unexpected header line {line!r}")
    try:
        embedded = ModelConfig.from_flat(flat)
    except ConfigError as exc:
        raise CheckpointError(f"{path}: bad embedded config: {exc}") from None
    target = config or embedded
    shapes = expected_shapes(target)

    store = nn.ParamStore()
    for name, _, shape_txt, off, nbytes in directory:
        shape = () if shape_txt == "scalar" else tuple(int(s) for s in shape_txt.split("x"))
        off, nbytes = int(off), int(nbytes)
        if off + nbytes > len(payload) or nbytes != 4 * int(np.prod(shape)):
            raise CheckpointError(f"{path}: tensor {name} truncated or mis-sized")
        if name not in shapes:
            raise ShapeMismatchError(f"{path}: unexpected tensor {name} for this config")
        if shape != shapes[name]:
            raise ShapeMismatchError(f"{path}: tensor {name} has shape {shape}, config expects {shapes[name]}")
        value = np.frombuffer(payload[off:off + nbytes], dtype="<f4").reshape(shape).astype(np.float32)
        store.add(name, value, trainable=not name.startswith("input."))
    missing = set(shapes) - set(store.values)
    if missing:
        raise ShapeMismatchError(f"{path}: missing tensors {sorted(missing)}")
    labels = meta.pop("labels", "")
    return Checkpoint(target, store, meta, labels.split(",") if labels else [])
