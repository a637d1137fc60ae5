"""``vladpool`` command line: one executable, one subcommand per pipeline stage.

Failures print a single ``error: <ErrorClass>: <message>`` line on stderr and
exit 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import data, gradcheck, model
from .config import (BackboneConfig, ConfigError, FrontendConfig, ModelConfig, TrainConfig,
                     dump_section, format_document, load_section, read_document, split_sections)
from .evaluate import duration_sweep, evaluate, export_embeddings, pool_compare
from .frontend import read_wav, stft_spectrogram, write_spectrogram_dump
from .train import train, write_records

SECTIONS = ("frontend", "backbone", "model", "train", "synth", "data")


@dataclasses.dataclass(frozen=True)
class DataConfig:
    train_fraction: float = 0.8
    n_per_class: int = 200


@dataclasses.dataclass
class RunConfig:
    """Merged view of every config section, built from a document plus ``--set`` overrides."""

    model: ModelConfig
    train: TrainConfig
    synth: data.SynthSpec
    data: DataConfig

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "RunConfig":
        s = split_sections(flat, SECTIONS)
        frontend = load_section(FrontendConfig, s.get("frontend", {}))
        bb = s.get("backbone", {})
        if "in_rows" not in bb:
            bb = {**bb, "in_rows": str(frontend.n_rows)}
        mdl = load_section(ModelConfig, s.get("model", {}), frontend=frontend,
                           backbone=load_section(BackboneConfig, bb))
        return cls(mdl, load_section(TrainConfig, s.get("train", {})),
                   load_section(data.SynthSpec, s.get("synth", {})),
                   load_section(DataConfig, s.get("data", {})))

    def to_flat(self) -> dict[str, str]:
        out = self.model.to_flat()
        for name in ("train", "synth", "data"):
            out.update({f"{name}.{k}": v for k, v in dump_section(getattr(self, name)).items()})
        return out


class CliError(RuntimeError):
    pass


def resolve_config(args) -> RunConfig:
    flat = read_document(args.config) if args.config else {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        flat[key.strip()] = value.strip()
    if args.seed is not None:
        flat["train.seed"] = flat["synth.seed"] = str(args.seed)
    threads = args.threads or os.environ.get("VLADPOOL_THREADS")
    if threads:
        flat["train.threads"] = str(int(threads))
    return RunConfig.from_flat(flat)


def prepare_out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else \
        Path("runs") / f"{time.strftime('%Y%m%d-%H%M%S')}_seed{cfg.train.seed}"
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CliError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(format_document(cfg.to_flat()))
    return out


def _manifests(args, cfg: RunConfig):
    if args.train and args.val:
        return data.load_manifest(args.train), data.load_manifest(args.val)
    if args.manifest:
        return data.split(data.load_manifest(args.manifest), cfg.data.train_fraction, cfg.train.seed)
    raise CliError("give --manifest (split by data.train_fraction) or both --train and --val")


def _model_cfg_for(cfg: RunConfig, manifest) -> ModelConfig:
    if manifest.n_classes != cfg.model.n_classes:
        return dataclasses.replace(cfg.model, n_classes=manifest.n_classes)
    return cfg.model


def _echo(prefix):
    def log(tag, rec=None):
        if rec is None:
            tag, rec = None, tag
        label = f"[{prefix}{'' if tag is None else ' ' + str(tag)}]"
        print(f"{label} epoch {rec.epoch}: loss {rec.train_loss:.4f} val macro-F1 {rec.val_macro_f1:.4f} "
              f"lr {rec.lr:.2e} ({rec.wall_time_s:.1f}s)", file=sys.stderr)
    return log


def cmd_synth_data(args, cfg):
    out = prepare_out_dir(args, cfg)
    m = data.synth_corpus(cfg.synth, args.n_per_class or cfg.data.n_per_class, out, cfg.train.threads)
    print(f"wrote {len(m)} utterances, manifest {out / 'manifest.tsv'}")


def cmd_featurize(args, cfg):
    out = prepare_out_dir(args, cfg)
    paths = list(args.wav or [])
    if args.manifest:
        paths += [r.path for r in data.load_manifest(args.manifest).records]
    if not paths:
        raise CliError("featurize needs WAV paths or --manifest")
    for p in paths:
        spec = stft_spectrogram(read_wav(p), cfg.model.frontend)
        write_spectrogram_dump(out / f"{Path(p).stem}.spec", spec)
        print(f"{p}\t{spec.n_rows}x{spec.n_frames}")


def cmd_train(args, cfg):
    tr, va = _manifests(args, cfg)
    out = prepare_out_dir(args, cfg)
    ckpt, log = train(_model_cfg_for(cfg, tr), tr, va, cfg.train, log_fn=_echo("train"))
    model.save(ckpt, out / "best.ckpt")
    log.write(out / "train_log.records")
    data.write_manifest(out / "train.tsv", tr)
    data.write_manifest(out / "val.tsv", va)
    print(f"best epoch {log.best_epoch} val macro-F1 {log.epochs[log.best_epoch].val_macro_f1:.4f}; "
          f"checkpoint {out / 'best.ckpt'}")


def cmd_eval(args, cfg):
    ckpt = model.load(args.checkpoint)
    manifest = data.load_manifest(args.manifest)
    report = evaluate(ckpt, manifest, args.crop, threads=cfg.train.threads)
    out = prepare_out_dir(args, cfg)
    (out / "report.txt").write_text(report.format() + "\n")
    write_records(out / "report.records", report.records())
    np.savetxt(out / "confusion.tsv", report.confusion, fmt="%d", delimiter="\t")
    print(report.format())


def _table_command(args, cfg, runner, stem, **kw):
    tr, va = _manifests(args, cfg)
    out = prepare_out_dir(args, cfg)
    table, runs = runner(_model_cfg_for(cfg, tr), tr, va, cfg.train, log_fn=_echo(stem), **kw)
    table.write(out, stem)
    for key, (ckpt, log, report) in runs.items():
        model.save(ckpt, out / f"{stem}_{key}.ckpt")
        log.write(out / f"{stem}_{key}_train_log.records")
    print(table.format(), end="")


def cmd_sweep_duration(args, cfg):
    frames = tuple(int(v) for v in args.frames.split(","))
    _table_command(args, cfg, duration_sweep, "duration_sweep", frame_counts=frames)


def cmd_pool_compare(args, cfg):
    _table_command(args, cfg, pool_compare, "pool_compare")


def cmd_embed(args, cfg):
    ckpt = model.load(args.checkpoint)
    manifest = data.load_manifest(args.manifest)
    out = prepare_out_dir(args, cfg)
    export = export_embeddings(ckpt, manifest, out, threads=cfg.train.threads)
    ratio = export.fisher_ratio()
    write_records(out / "separation.records", [{"fisher_ratio": f"{ratio:.6f}",
                                                "n_utterances": str(len(export.ids)),
                                                "embedding_dim": str(export.embeddings.shape[1])}])
    print(f"{len(export.ids)} embeddings; separation ratio {ratio:.3f}")


def cmd_grad_check(args, cfg):
    results = gradcheck.run_suite(range(args.seeds))
    ok = True
    for name, (err, tol) in results.items():
        passed = err < tol
        ok &= passed
        print(f"{name:24s} max_rel_err={err:.3e} tol={tol:.0e} {'PASS' if passed else 'FAIL'}")
    if not ok:
        raise CliError("gradient check exceeded tolerance")


def cmd_info(args, cfg):
    ckpt = model.load(args.checkpoint)
    print(format_document(ckpt.config.to_flat()), end="")
    for k, v in sorted(ckpt.meta.items()):
        print(f"meta.{k} = {v}")
    if ckpt.labels:
        print(f"meta.labels = {','.join(ckpt.labels)}")
    total = 0
    for name, value in ckpt.params.values.items():
        total += value.size
        print(f"{name:24s} {'x'.join(map(str, value.shape)):>14s}")
    print(f"total parameters: {total}")


COMMANDS = {
    "synth-data": (cmd_synth_data, "generate a synthetic toy-language corpus"),
    "featurize": (cmd_featurize, "dump spectrograms of WAV files"),
    "train": (cmd_train, "train one model"),
    "eval": (cmd_eval, "evaluate a checkpoint on a manifest"),
    "sweep-duration": (cmd_sweep_duration, "train per crop length; F1 table"),
    "pool-compare": (cmd_pool_compare, "train every pooling head; F1 table"),
    "embed": (cmd_embed, "export utterance embeddings + 2-D PCA"),
    "grad-check": (cmd_grad_check, "finite-difference gradient suite"),
    "info": (cmd_info, "print checkpoint config and tensor directory"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vladpool", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'section.key = value' config document")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int, help="sets train.seed and synth.seed")
    common.add_argument("--out", help="output directory (default runs/<timestamp>_seed<seed>)")
    common.add_argument("--force", action="store_true", help="allow writing into a non-empty --out")
    common.add_argument("--threads", type=int, help="worker cap (fallback: $VLADPOOL_THREADS)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    parsers = {name: sub.add_parser(name, parents=[common], help=help_)
               for name, (_, help_) in COMMANDS.items()}

    parsers["synth-data"].add_argument("--n-per-class", type=int)
    parsers["featurize"].add_argument("wav", nargs="*")
    parsers["featurize"].add_argument("--manifest")
    for name in ("train", "sweep-duration", "pool-compare"):
        p = parsers[name]
        p.add_argument("--manifest", help="single manifest, split by data.train_fraction")
        p.add_argument("--train", help="training manifest")
        p.add_argument("--val", help="validation / held-out manifest")
    parsers["sweep-duration"].add_argument("--frames", default="200,300,400,500")
    for name in ("eval", "embed"):
        parsers[name].add_argument("--checkpoint", required=True)
        parsers[name].add_argument("--manifest", required=True)
    parsers["eval"].add_argument("--crop", default="full_utterance",
                                 help="full_utterance or fixed_frames(N)")
    parsers["info"].add_argument("--checkpoint", required=True)
    parsers["grad-check"].add_argument("--seeds", type=int, default=20)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = resolve_config(args)
        if cfg.train.threads > 0:
            from threadpoolctl import threadpool_limits
            threadpool_limits(cfg.train.threads)
        COMMANDS[args.command][0](args, cfg)
    except Exception as exc:  # one machine-parsable line per failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
