"""Minibatch training: Adam, geometric LR decay, early stopping on validation macro-F1."""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as lid_model
from . import nn
from .config import ModelConfig, TrainConfig
from .data import Manifest, featurize
from .metrics import macro_f1


class TrainingError(RuntimeError):
    pass


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Geometric interpolation from lr_initial (epoch 0) to lr_final (last epoch)."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch == 0 or cfg.epochs == 1:
        return cfg.lr_initial
    if epoch == cfg.epochs - 1:
        return cfg.lr_final
    return cfg.lr_initial * (cfg.lr_final / cfg.lr_initial) ** (epoch / (cfg.epochs - 1))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store: nn.ParamStore, lr: float, state: AdamState) -> None:
    """Bias-corrected Adam update of every trainable parameter, in place."""
    state.t += 1
    c1 = 1 - state.beta1 ** state.t
    c2 = 1 - state.beta2 ** state.t
    for name in store.trainable():
        g = store.grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        store.values[name] -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(store.values[name].dtype)


class EarlyStopping:
    """Tracks the best metric; ``update`` returns True once more than
    ``patience`` consecutive epochs fail to strictly improve on it."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = -1
        self.bad_epochs = 0

    def update(self, epoch: int, metric: float) -> bool:
        if metric > self.best:
            self.best, self.best_epoch, self.bad_epochs = metric, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs > self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_macro_f1: float
    lr: float
    wall_time_s: float

    def as_record(self) -> dict:
        return {"epoch": str(self.epoch), "train_loss": f"{self.train_loss:.8f}",
                "val_macro_f1": f"{self.val_macro_f1:.6f}", "lr": repr(self.lr),
                "wall_time_s": f"{self.wall_time_s:.3f}"}


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    def write(self, path) -> None:
        write_records(path, [e.as_record() for e in self.epochs])


def write_records(path, records: list[dict]) -> None:
    """One record per line, ``key=value`` fields separated by tabs."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write("\t".join(f"{k}={v}" for k, v in rec.items()) + "\n")


def read_records(path) -> list[dict]:
    with open(path) as fh:
        return [dict(f.split("=", 1) for f in line.rstrip("\n").split("\t")) for line in fh if line.strip()]


def crop_batch(specs, idx, frames, rng) -> np.ndarray:
    out = np.empty((len(idx), specs[0].shape[0], frames), dtype=specs[0].dtype)
    for row, i in enumerate(idx):
        s = specs[i]
        t = s.shape[1]
        if t < frames:
            out[row] = s[:, np.arange(frames) % t]
        else:
            start = int(rng.integers(0, t - frames + 1))
            out[row] = s[:, start:start + frames]
    return out


def _batches(specs, targets, cfg: TrainConfig, rng):
    order = rng.permutation(len(specs))
    for a in range(0, len(order), cfg.batch_size):
        idx = order[a:a + cfg.batch_size]
        yield crop_batch(specs, idx, cfg.crop_frames, rng), targets[idx]


def _prefetch(gen, depth: int):
    """Run ``gen`` in a worker thread with at most ``depth`` batches in flight."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    done = object()

    def work():
        try:
            for item in gen:
                q.put(item)
        except BaseException as exc:  # surfaced in the consumer
            q.put(exc)
        q.put(done)

    threading.Thread(target=work, daemon=True).start()
    while True:
        item = q.get()
        if item is done:
            return
        if isinstance(item, BaseException):
            raise item
        yield item


def predict(params, cfg: ModelConfig, specs) -> np.ndarray:
    """Argmax class per full-length utterance."""
    return np.array([int(np.argmax(lid_model.forward(s, params, cfg)[0])) for s in specs], dtype=np.int64)


def train_arrays(model_cfg: ModelConfig, train_specs, train_targets, val_specs, val_targets,
                 cfg: TrainConfig, log_fn=None):
    """Train on precomputed spectrograms; returns ``(best ParamStore, TrainLog)``."""
    if len(train_specs) == 0 or len(val_specs) == 0:
        raise TrainingError("empty training or validation set")
    train_targets = np.asarray(train_targets)
    missing = set(range(model_cfg.n_classes)) - set(train_targets.tolist())
    if missing:
        raise TrainingError(f"classes absent from training data: {sorted(missing)}")
    if cfg.crop_frames < model_cfg.backbone.min_frames:
        raise TrainingError(f"crop_frames {cfg.crop_frames} below backbone minimum {model_cfg.backbone.min_frames}")

    rng = np.random.default_rng(cfg.seed)
    store = lid_model.init_model(model_cfg, rng)
    lid_model.set_input_normalization(store, train_specs)
    state = AdamState(cfg.beta1, cfg.beta2, cfg.adam_eps)
    stopper = EarlyStopping(cfg.early_stop_patience)
    log = TrainLog()
    best = store.copy()

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, cfg)
        losses = []
        for x, y in _prefetch(_batches(train_specs, train_targets, cfg, rng), cfg.prefetch):
            store.zero_grad()
            logits, _, cache = lid_model.forward(x, store.values, model_cfg)
            loss = lid_model.backward(cache, y, logits, store, model_cfg)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, step {state.t}: loss={loss}, "
                    f"grad norm={store.global_grad_norm():.3g}, lr={lr:.3g}")
            if cfg.clip_norm > 0:
                norm = store.global_grad_norm()
                if norm > cfg.clip_norm:
                    for name in store.trainable():
                        store.grads[name] *= cfg.clip_norm / norm
            adam_step(store, lr, state)
            losses.append(loss * len(y))
        f1 = macro_f1(val_targets, predict(store.values, model_cfg, val_specs), model_cfg.n_classes)
        rec = EpochRecord(epoch, float(np.sum(losses) / len(train_specs)), f1, lr, time.perf_counter() - t0)
        log.epochs.append(rec)
        if log_fn:
            log_fn(rec)
        stop = stopper.update(epoch, f1)
        if stopper.best_epoch == epoch:
            best = store.copy()
        if stop:
            log.stopped_early = True
            break
    log.best_epoch = stopper.best_epoch
    return best, log


def train(model_cfg: ModelConfig, train_manifest: Manifest, val_manifest: Manifest, cfg: TrainConfig,
          log_fn=None, features=None):
    """Featurise both manifests and train; returns ``(best Checkpoint, TrainLog)``.

    ``features`` may supply precomputed ``(train_specs, val_specs)``.
    """
    if len(train_manifest) == 0 or len(val_manifest) == 0:
        raise TrainingError("empty manifest")
    if train_manifest.label_map != val_manifest.label_map:
        raise TrainingError("train and validation manifests use different label maps")
    if train_manifest.n_classes != model_cfg.n_classes:
        raise TrainingError(
            f"model has {model_cfg.n_classes} classes but manifest vocabulary has {train_manifest.n_classes}")
    if features is None:
        features = (featurize(train_manifest, model_cfg.frontend, cfg.threads),
                    featurize(val_manifest, model_cfg.frontend, cfg.threads))
    store, log = train_arrays(model_cfg, features[0], train_manifest.targets(),
                              features[1], val_manifest.targets(), cfg, log_fn)
    meta = {"epoch": str(log.best_epoch), "best_val_macro_f1": f"{log.epochs[log.best_epoch].val_macro_f1:.6f}",
            "seed": str(cfg.seed), "crop_frames": str(cfg.crop_frames)}
    return lid_model.Checkpoint(model_cfg, store, meta, train_manifest.labels), log
