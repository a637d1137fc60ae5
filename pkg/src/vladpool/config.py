"""Dataclass configs and the flat ``section.key = value`` document format.

Every config section is a flat dataclass of scalars or integer tuples, so it
can be written to (and parsed from) a plain text document that is easy to diff
and easy to override from the command line with ``--set key=value``.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Invalid, unknown or malformed configuration key/value."""


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate_hz: int = 16000
    fft_size: int = 512
    window_ms: float = 25.0
    shift_ms: float = 10.0
    n_spectral_bins: int = 256
    include_energy: bool = True
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ConfigError("frontend.sample_rate_hz must be positive")
        if self.n_spectral_bins > self.fft_size // 2:
            raise ConfigError("frontend.n_spectral_bins must be <= fft_size/2")
        if self.window_samples > self.fft_size:
            raise ConfigError("frontend window longer than fft_size")
        if self.shift_samples < 1 or self.window_samples < 1:
            raise ConfigError("frontend window/shift must cover at least one sample")
        if not self.log_floor > 0:
            raise ConfigError("frontend.log_floor must be positive")

    @property
    def window_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.window_ms / 1000.0))

    @property
    def shift_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.shift_ms / 1000.0))

    @property
    def n_rows(self) -> int:
        return self.n_spectral_bins + int(self.include_energy)


@dataclass(frozen=True)
class BackboneConfig:
    """Plain conv stack; block i uses entry i of every tuple.

    Frequency geometry must collapse ``in_rows`` to height 1 after the final
    block, which is checked on construction.
    """

    in_rows: int = 257
    channels: tuple[int, ...] = (8, 16, 32, 64)
    freq_kernel: tuple[int, ...] = (7, 5, 5, 5)
    freq_stride: tuple[int, ...] = (4, 4, 4, 1)
    freq_pad: tuple[int, ...] = (3, 2, 2, 0)
    time_kernel: tuple[int, ...] = (3, 3, 3, 3)
    time_stride: tuple[int, ...] = (2, 2, 2, 2)
    time_pad: tuple[int, ...] = (1, 2, 2, 1)

    def __post_init__(self):
        n = len(self.channels)
        lists = (self.freq_kernel, self.freq_stride, self.freq_pad,
                 self.time_kernel, self.time_stride, self.time_pad)
        if n == 0 or any(len(v) != n for v in lists):
            raise ConfigError("backbone per-block tuples must be non-empty and equal length")
        if min(self.channels) < 1 or min(self.freq_stride + self.time_stride) < 1:
            raise ConfigError("backbone channels and strides must be >= 1")
        if min(self.freq_kernel + self.time_kernel) < 1 or min(self.freq_pad + self.time_pad) < 0:
            raise ConfigError("backbone kernels must be >= 1 and paddings >= 0")
        h = self.in_rows
        for i in range(n):
            h = (h + 2 * self.freq_pad[i] - self.freq_kernel[i]) // self.freq_stride[i] + 1
            if h < 1:
                raise ConfigError(f"backbone block {i} collapses frequency axis below 1")
        if h != 1:
            raise ConfigError(f"backbone leaves frequency height {h}; final block must reach 1")

    @property
    def descriptor_dim(self) -> int:
        return self.channels[-1]

    @property
    def n_blocks(self) -> int:
        return len(self.channels)

    def n_descriptors(self, t: int) -> int:
        """Number of local descriptors produced for a ``t``-frame input (may be < 1)."""
        for k, s, p in zip(self.time_kernel, self.time_stride, self.time_pad):
            t = (t + 2 * p - k) // s + 1
            if t < 1:
                return 0
        return t

    @property
    def min_frames(self) -> int:
        t = 1
        while self.n_descriptors(t) < 1:
            t += 1
        return t

    @property
    def time_downsample(self) -> int:
        out = 1
        for s in self.time_stride:
            out *= s
        return out


POOLING_KINDS = ("avg", "stats", "netvlad", "ghostvlad")


@dataclass(frozen=True)
class ModelConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    pooling_kind: str = "ghostvlad"
    k: int = 8
    g: int = 2
    normalize: bool = True
    embedding_dim: int = 64
    n_classes: int = 7

    def __post_init__(self):
        if self.pooling_kind not in POOLING_KINDS:
            raise ConfigError(f"model.pooling_kind must be one of {POOLING_KINDS}, got {self.pooling_kind!r}")
        if self.pooling_kind == "netvlad" and self.g != 0:
            raise ConfigError("model.pooling_kind=netvlad requires model.g = 0")
        if self.k < 1 or self.g < 0:
            raise ConfigError("model.k must be >= 1 and model.g >= 0")
        if self.n_classes < 2:
            raise ConfigError("model.n_classes must be >= 2")
        if self.embedding_dim < 1:
            raise ConfigError("model.embedding_dim must be >= 1")
        if self.backbone.in_rows != self.frontend.n_rows:
            raise ConfigError(
                f"backbone.in_rows={self.backbone.in_rows} does not match frontend rows {self.frontend.n_rows}")

    @property
    def pooled_dim(self) -> int:
        d = self.backbone.descriptor_dim
        return {"avg": d, "stats": 2 * d}.get(self.pooling_kind, self.k * d)

    def to_flat(self) -> dict[str, str]:
        out = {f"model.{k}": v for k, v in dump_section(self, skip=("frontend", "backbone")).items()}
        out.update({f"frontend.{k}": v for k, v in dump_section(self.frontend).items()})
        out.update({f"backbone.{k}": v for k, v in dump_section(self.backbone).items()})
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "ModelConfig":
        sections = split_sections(flat, allowed=("model", "frontend", "backbone"))
        return load_section(cls, sections.get("model", {}),
                            frontend=load_section(FrontendConfig, sections.get("frontend", {})),
                            backbone=load_section(BackboneConfig, sections.get("backbone", {})))


@dataclass(frozen=True)
class TrainConfig:
    lr_initial: float = 0.01
    lr_final: float = 0.00001
    epochs: int = 15
    batch_size: int = 32
    early_stop_patience: int = 3
    crop_frames: int = 500
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 0.0  # 0 disables global-norm clipping
    prefetch: int = 2
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.lr_final <= self.lr_initial:
            raise ConfigError("train: need 0 < lr_final <= lr_initial")
        if self.epochs < 1 or self.batch_size < 1 or self.crop_frames < 1:
            raise ConfigError("train: epochs, batch_size and crop_frames must be >= 1")
        if self.early_stop_patience < 0 or self.prefetch < 1 or self.threads < 1:
            raise ConfigError("train: patience >= 0, prefetch >= 1, threads >= 1 required")


# --- flat document plumbing -------------------------------------------------


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, tp, key: str):
    text = text.strip()
    try:
        if tp is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text
        if typing.get_origin(tp) is tuple:
            inner = typing.get_args(tp)[0]
            return tuple(_parse(p, inner, key) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    raise ConfigError(f"unsupported type for {key}")


def dump_section(obj, skip=()) -> dict[str, str]:
    return {f.name: _format(getattr(obj, f.name))
            for f in dataclasses.fields(obj) if f.name not in skip}


def load_section(cls, values: dict[str, str], **fixed):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = dict(fixed)
    for key, text in values.items():
        if key not in names or key in fixed:
            raise ConfigError(f"unknown config key: {cls.__name__}.{key}")
        kwargs[key] = _parse(text, hints[key], key)
    return cls(**kwargs)


def split_sections(flat: dict[str, str], allowed) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if not name or section not in allowed:
            raise ConfigError(f"unknown config key: {key}")
        out.setdefault(section, {})[name] = value
    return out


def parse_document(text: str) -> dict[str, str]:
    """Parse ``section.key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        out[key.strip()] = value.strip()
    return out


def format_document(flat: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in sorted(flat.items()))


def read_document(path) -> dict[str, str]:
    return parse_document(Path(path).read_text())
