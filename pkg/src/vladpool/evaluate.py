"""Evaluation, pooling comparison / duration sweep tables, embedding export."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as lid_model
from .config import ModelConfig, TrainConfig
from .data import Manifest, featurize
from .metrics import EvalReport, compute_f1, confusion_matrix
from .train import train, write_records

POOLING_LABELS = {
    "avg": "Average pooling",
    "stats": "Statistics pooling",
    "netvlad": "NetVLAD pooling",
    "ghostvlad": "GhostVLAD pooling",
}


class VocabularyMismatchError(ValueError):
    pass


def parse_crop_policy(policy) -> int | None:
    """``None``/``"full_utterance"`` -> None; ``"fixed_frames(n)"`` or an int -> n."""
    if policy is None or policy == "full_utterance":
        return None
    if isinstance(policy, int):
        return policy
    m = re.fullmatch(r"fixed_frames\((\d+)\)", str(policy).strip())
    if not m:
        raise ValueError(f"unknown crop policy {policy!r}")
    return int(m.group(1))


def centre_crop(spec: np.ndarray, frames: int) -> np.ndarray:
    t = spec.shape[1]
    if t < frames:
        return spec[:, np.arange(frames) % t]
    start = (t - frames) // 2
    return spec[:, start:start + frames]


def evaluate(ckpt: lid_model.Checkpoint, manifest: Manifest, crop_policy="full_utterance",
             features=None, threads: int = 1) -> EvalReport:
    if ckpt.config.n_classes != manifest.n_classes:
        raise VocabularyMismatchError(
            f"checkpoint has {ckpt.config.n_classes} classes, manifest vocabulary has {manifest.n_classes}")
    if ckpt.labels and list(ckpt.labels) != manifest.labels:
        raise VocabularyMismatchError(f"label maps differ: checkpoint {ckpt.labels} vs manifest {manifest.labels}")
    frames = parse_crop_policy(crop_policy)
    specs = features if features is not None else featurize(manifest, ckpt.config.frontend, threads)
    preds = []
    for s in specs:
        x = s if frames is None else centre_crop(s, frames)
        logits, _ = ckpt.predict(x)
        preds.append(int(np.argmax(logits)))
    cm = confusion_matrix(manifest.targets(), preds, manifest.n_classes)
    policy = "full_utterance" if frames is None else f"fixed_frames({frames})"
    return compute_f1(cm, policy, manifest.labels)


# --- result tables -----------------------------------------------------------

@dataclass
class ResultTable:
    header: tuple[str, str]
    rows: list[tuple[str, float]]  # (row label, macro F1 in [0, 1])
    key: str = "row"

    def format(self) -> str:
        w0 = max(len(self.header[0]), *(len(r[0]) for r in self.rows))
        w1 = len(self.header[1])
        lines = [f"{self.header[0]:<{w0}}  {self.header[1]:>{w1}}"]
        lines += [f"{label:<{w0}}  {100 * f1:>{w1}.2f}" for label, f1 in self.rows]
        return "\n".join(lines) + "\n"

    def records(self) -> list[dict]:
        return [{self.key: label, "macro_f1": f"{f1:.6f}"} for label, f1 in self.rows]

    def write(self, out_dir, stem: str) -> None:
        out_dir = Path(out_dir)
        (out_dir / f"{stem}.txt").write_text(self.format())
        write_records(out_dir / f"{stem}.records", self.records())


def _features(model_cfg, train_manifest, eval_manifest, threads):
    return (featurize(train_manifest, model_cfg.frontend, threads),
            featurize(eval_manifest, model_cfg.frontend, threads))


def pool_compare(model_cfg: ModelConfig, train_manifest: Manifest, eval_manifest: Manifest,
                 train_cfg: TrainConfig, kinds=("avg", "stats", "netvlad", "ghostvlad"),
                 features=None, log_fn=None):
    """Train one model per pooling head (same seed, same backbone config).

    Returns ``(ResultTable, {kind: (Checkpoint, TrainLog, EvalReport)})``.
    """
    features = features or _features(model_cfg, train_manifest, eval_manifest, train_cfg.threads)
    rows, runs = [], {}
    for kind in kinds:
        cfg = dataclasses.replace(model_cfg, pooling_kind=kind, g=0 if kind == "netvlad" else model_cfg.g)
        ckpt, log = train(cfg, train_manifest, eval_manifest, train_cfg,
                          log_fn=(lambda rec, k=kind: log_fn(k, rec)) if log_fn else None,
                          features=features)
        report = evaluate(ckpt, eval_manifest, features=features[1])
        rows.append((POOLING_LABELS[kind], report.macro_f1))
        runs[kind] = (ckpt, log, report)
    return ResultTable(("Pooling Method", "F1-Score (%)"), rows, key="method"), runs


def duration_sweep(model_cfg: ModelConfig, train_manifest: Manifest, eval_manifest: Manifest,
                   train_cfg: TrainConfig, frame_counts=(200, 300, 400, 500), features=None, log_fn=None):
    """Train one model per training crop length; evaluate each on full utterances."""
    for n in frame_counts:
        if n < model_cfg.backbone.min_frames:
            raise ValueError(f"crop of {n} frames below backbone minimum {model_cfg.backbone.min_frames}")
    features = features or _features(model_cfg, train_manifest, eval_manifest, train_cfg.threads)
    rows, runs = [], {}
    for n in frame_counts:
        cfg = dataclasses.replace(train_cfg, crop_frames=n)
        ckpt, log = train(model_cfg, train_manifest, eval_manifest, cfg,
                          log_fn=(lambda rec, n=n: log_fn(n, rec)) if log_fn else None,
                          features=features)
        report = evaluate(ckpt, eval_manifest, features=features[1])
        rows.append((str(n), report.macro_f1))
        runs[n] = (ckpt, log, report)
    return ResultTable(("No. input frames (training)", "F1-Score (%)"), rows, key="frames"), runs


# --- embeddings ----------------------------------------------------------------

@dataclass
class Projection:
    coords: np.ndarray          # (n, 2)
    components: np.ndarray      # (2, dim), orthonormal rows
    explained_variance: np.ndarray  # all components, non-increasing
    mean: np.ndarray


def pca(x: np.ndarray, n_components: int = 2) -> Projection:
    """Principal components of mean-centred rows via SVD."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    centred = x - mean
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    var = s ** 2 / max(len(x) - 1, 1)
    comps = vt[:n_components]
    if comps.shape[0] < n_components:
        comps = np.vstack([comps, np.zeros((n_components - comps.shape[0], x.shape[1]))])
    return Projection(centred @ comps.T, comps, var, mean)


def fisher_ratio(emb: np.ndarray, labels) -> float:
    """Mean distance between class centroids over mean distance of points to their own centroid."""
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    centroids = np.stack([emb[labels == c].mean(axis=0) for c in classes])
    intra = np.mean([np.linalg.norm(emb[labels == c] - centroids[i], axis=1).mean()
                     for i, c in enumerate(classes)])
    iu = np.triu_indices(len(classes), 1)
    inter = np.linalg.norm(centroids[:, None] - centroids[None], axis=-1)[iu].mean()
    return float(inter / max(intra, 1e-12))


@dataclass
class EmbeddingExport:
    ids: list[str]
    labels: list[str]
    embeddings: np.ndarray
    projection: Projection

    def fisher_ratio(self) -> float:
        return fisher_ratio(self.embeddings, self.labels)


def extract_embeddings(ckpt: lid_model.Checkpoint, specs) -> np.ndarray:
    return np.stack([ckpt.predict(s)[1] for s in specs]).astype(np.float64)


def export_embeddings(ckpt: lid_model.Checkpoint, manifest: Manifest, out_dir=None,
                      features=None, threads: int = 1) -> EmbeddingExport:
    """Embeddings + 2-D PCA, written as ``embeddings.tsv`` / ``projection.tsv`` when ``out_dir`` is set."""
    specs = features if features is not None else featurize(manifest, ckpt.config.frontend, threads)
    emb = extract_embeddings(ckpt, specs)
    ids = [Path(r.path).stem for r in manifest.records]
    labels = [r.label for r in manifest.records]
    export = EmbeddingExport(ids, labels, emb, pca(emb))
    if out_dir is not None:
        out_dir = Path(out_dir)
        with open(out_dir / "embeddings.tsv", "w") as fh:
            for i, lab, row in zip(ids, labels, emb):
                fh.write("\t".join([i, lab] + [repr(float(v)) for v in row]) + "\n")
        with open(out_dir / "projection.tsv", "w") as fh:
            for i, lab, (a, b) in zip(ids, labels, export.projection.coords):
                fh.write(f"{i}\t{lab}\t{a!r}\t{b!r}\n")
    return export
