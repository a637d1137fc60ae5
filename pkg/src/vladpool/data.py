"""Manifests, label maps, stratified splits and a synthetic "toy language" corpus."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import FrontendConfig
from .frontend import AudioClip, read_wav, stft_spectrogram, write_wav

# Names used to label synthetic classes.
LANGUAGES = ("hindi", "english", "kannada", "telugu", "assamese", "bengali", "malayalam")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    path: str
    label: str
    duration_s: float | None = None


@dataclass
class Manifest:
    records: list[Record]
    label_map: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.label_map:
            self.label_map = {lab: i for i, lab in enumerate(sorted({r.label for r in self.records}))}
        unknown = {r.label for r in self.records} - set(self.label_map)
        if unknown:
            raise ManifestError(f"labels missing from label map: {sorted(unknown)}")

    def __len__(self):
        return len(self.records)

    @property
    def labels(self) -> list[str]:
        return sorted(self.label_map, key=self.label_map.get)

    @property
    def n_classes(self) -> int:
        return len(self.label_map)

    def targets(self) -> np.ndarray:
        return np.array([self.label_map[r.label] for r in self.records], dtype=np.int64)

    def subset(self, idx) -> "Manifest":
        return Manifest([self.records[i] for i in idx], dict(self.label_map))


def label_map_path(manifest_path) -> Path:
    p = Path(manifest_path)
    return p.with_name(p.name + ".labels")


def write_label_map(path, label_map: dict[str, int]) -> None:
    Path(path).write_text("".join(f"{lab}\t{i}\n" for lab, i in sorted(label_map.items(), key=lambda kv: kv[1])))


def read_label_map(path) -> dict[str, int]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0]:
            raise ManifestError(f"{path}:{lineno}: expected 'label<TAB>index'")
        out[parts[0]] = int(parts[1])
    if sorted(out.values()) != list(range(len(out))):
        raise ManifestError(f"{path}: indices must be 0..{len(out) - 1}")
    return out


def load_manifest(path, persist_label_map=True) -> Manifest:
    """Parse ``path<TAB>label[<TAB>duration]`` lines.

    Relative audio paths resolve against the manifest's directory. A label
    map stored next to the manifest is reused; otherwise the sorted-unique map
    is derived and written there.
    """
    path = Path(path)
    base = path.parent
    records, seen = [], set()
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3) or not parts[0].strip() or not parts[1].strip():
            raise ManifestError(f"{path}:{lineno}: expected 'path<TAB>label[<TAB>duration]'")
        audio = parts[0].strip()
        if audio in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate path {audio}")
        seen.add(audio)
        try:
            duration = float(parts[2]) if len(parts) == 3 else None
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: bad duration {parts[2]!r}") from None
        resolved = audio if Path(audio).is_absolute() else str(base / audio)
        records.append(Record(resolved, parts[1].strip(), duration))
    if not records:
        raise ManifestError(f"{path}: empty manifest")
    lm_path = label_map_path(path)
    if lm_path.exists():
        return Manifest(records, read_label_map(lm_path))
    manifest = Manifest(records)
    if persist_label_map:
        try:
            write_label_map(lm_path, manifest.label_map)
        except OSError:
            pass
    return manifest


def write_manifest(path, manifest: Manifest) -> None:
    path = Path(path)
    base = path.parent.resolve()
    lines = []
    for r in manifest.records:
        p = Path(r.path).resolve()
        rel = p.relative_to(base) if p.is_relative_to(base) else p
        dur = "" if r.duration_s is None else f"\t{r.duration_s:.4f}"
        lines.append(f"{rel}\t{r.label}{dur}\n")
    path.write_text("".join(lines))
    write_label_map(label_map_path(path), manifest.label_map)


def split(manifest: Manifest, train_fraction: float = 0.8, seed: int = 0) -> tuple[Manifest, Manifest]:
    """Per-class stratified split into disjoint train/eval manifests."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    targets = manifest.targets()
    train_idx, eval_idx = [], []
    for cls in range(manifest.n_classes):
        idx = np.flatnonzero(targets == cls)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise ManifestError(f"class {manifest.labels[cls]!r} has fewer than 2 utterances")
        idx = rng.permutation(idx)
        n_train = min(max(int(round(train_fraction * idx.size)), 1), idx.size - 1)
        train_idx.extend(idx[:n_train].tolist())
        eval_idx.extend(idx[n_train:].tolist())
    return manifest.subset(sorted(train_idx)), manifest.subset(sorted(eval_idx))


def featurize(manifest: Manifest, cfg: FrontendConfig | None = None, threads: int = 1,
              dtype=np.float32) -> list[np.ndarray]:
    """Spectrogram matrices for every record, in manifest order."""
    cfg = cfg or FrontendConfig()

    def one(rec):
        return stft_spectrogram(read_wav(rec.path), cfg).data.astype(dtype)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, manifest.records))
    return [one(r) for r in manifest.records]


# --- synthetic corpus --------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Toy "languages": Markov sequences of per-class band-energy templates over noise."""

    n_classes: int = 7
    templates_per_class: int = 3
    n_bands: int = 16
    template_db: float = 10.0
    min_template_distance_db: float = 6.0
    self_transition: float = 0.5
    dwell_ms_min: int = 60
    dwell_ms_max: int = 250
    tilt_db: float = 3.0
    gain_db: float = 6.0
    noise_burst_probability: float = 0.0
    burst_ms_min: int = 100
    burst_ms_max: int = 500
    min_duration_s: float = 3.0
    max_duration_s: float = 6.0
    sample_rate_hz: int = 16000
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.templates_per_class < 1 or self.n_bands < 2:
            raise ValueError("synth: need n_classes >= 1, templates_per_class >= 1, n_bands >= 2")
        if not 0 <= self.noise_burst_probability <= 1:
            raise ValueError("synth.noise_burst_probability must be in [0, 1]")
        if not 0 <= self.self_transition <= 1:
            raise ValueError("synth.self_transition must be in [0, 1]")
        if not 0 < self.min_duration_s <= self.max_duration_s:
            raise ValueError("synth: need 0 < min_duration_s <= max_duration_s")
        if not 0 < self.dwell_ms_min <= self.dwell_ms_max or not 0 < self.burst_ms_min <= self.burst_ms_max:
            raise ValueError("synth: dwell/burst ranges must be positive and ordered")

    def class_names(self) -> list[str]:
        if self.n_classes <= len(LANGUAGES):
            return list(LANGUAGES[:self.n_classes])
        return [f"lang{i:02d}" for i in range(self.n_classes)]


@dataclass
class TemplateBank:
    gains_db: np.ndarray    # (C, M, n_bands)
    transitions: np.ndarray  # (C, M, M), row-stochastic

    @classmethod
    def build(cls, spec: SynthSpec, rng: np.random.Generator, max_tries=1000) -> "TemplateBank":
        c, m, b = spec.n_classes, spec.templates_per_class, spec.n_bands
        gains = np.empty((c, m, b))
        for cls_i in range(c):
            for t in range(m):
                for _ in range(max_tries):
                    g = rng.normal(0.0, spec.template_db, size=b)
                    # light smoothing across neighbouring bands keeps profiles formant-like
                    g = (g + np.roll(g, 1) + np.roll(g, -1)) / 3
                    others = gains[:cls_i].reshape(-1, b)
                    if others.size == 0 or np.sqrt(np.mean((others - g) ** 2, axis=1)).min() \
                            >= spec.min_template_distance_db:
                        break
                else:
                    raise ValueError("could not draw templates meeting min_template_distance_db")
                gains[cls_i, t] = g
        off = rng.dirichlet(np.ones(m), size=(c, m)) * (1 - spec.self_transition)
        trans = off + np.eye(m) * spec.self_transition
        trans /= trans.sum(axis=-1, keepdims=True)
        return cls(gains, trans)


def _min_interclass_distance(gains) -> float:
    """Smallest RMS dB distance between templates of different classes."""
    c = gains.shape[0]
    best = np.inf
    for i in range(c):
        for j in range(i + 1, c):
            diff = gains[i][:, None, :] - gains[j][None, :, :]
            best = min(best, float(np.sqrt(np.mean(diff ** 2, axis=-1)).min()))
    return best


def _band_filter(n: int, gains_db: np.ndarray, tilt_db: float) -> np.ndarray:
    """Linear amplitude response on the rfft grid of an ``n``-sample segment."""
    n_bins = n // 2 + 1
    pos = np.linspace(0.0, 1.0, n_bins)
    centres = (np.arange(gains_db.size) + 0.5) / gains_db.size
    db = np.interp(pos, centres, gains_db) + tilt_db * (pos - 0.5)
    return 10.0 ** (db / 20.0)


def synth_utterance(spec: SynthSpec, bank: TemplateBank, cls: int, rng: np.random.Generator):
    """Returns ``(samples, bursts)``; ``bursts`` lists (start, end) sample ranges of noise."""
    sr = spec.sample_rate_hz
    n = int(round(rng.uniform(spec.min_duration_s, spec.max_duration_s) * sr))
    tilt = rng.uniform(-spec.tilt_db, spec.tilt_db)
    m = spec.templates_per_class
    out = np.empty(n)
    state = int(rng.integers(m))
    pos = 0
    while pos < n:
        seg = min(n - pos, int(rng.integers(spec.dwell_ms_min, spec.dwell_ms_max + 1) * sr // 1000))
        spectrum = np.fft.rfft(rng.standard_normal(seg)) * _band_filter(seg, bank.gains_db[cls, state], tilt)
        chunk = np.fft.irfft(spectrum, n=seg)
        out[pos:pos + seg] = chunk
        pos += seg
        state = int(rng.choice(m, p=bank.transitions[cls, state]))
    rms = 0.1 * 10.0 ** (rng.uniform(-spec.gain_db, spec.gain_db) / 20.0)
    out *= rms / max(np.sqrt(np.mean(out ** 2)), 1e-12)

    bursts = []
    if spec.noise_burst_probability > 0:
        # chunk lengths share one distribution, so the burst share of time is p in expectation
        pos = 0
        while pos < n:
            seg = min(n - pos, int(rng.integers(spec.burst_ms_min, spec.burst_ms_max + 1) * sr // 1000))
            if rng.random() < spec.noise_burst_probability:
                level = rms * 10.0 ** (rng.uniform(0.0, 6.0) / 20.0)
                out[pos:pos + seg] = rng.standard_normal(seg) * level
                bursts.append((pos, pos + seg))
            pos += seg
    return np.clip(out, -1.0, 1.0), bursts


def synth_corpus(spec: SynthSpec, n_utts_per_class: int, out_dir, threads: int = 1) -> Manifest:
    """Write WAVs, ``manifest.tsv`` (+ label map) and ``bursts.tsv`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "wav").mkdir(exist_ok=True)
    root = np.random.SeedSequence(spec.seed)
    bank_seq, utt_seq = root.spawn(2)
    bank = TemplateBank.build(spec, np.random.default_rng(bank_seq))
    names = spec.class_names()
    jobs = [(c, i) for c in range(spec.n_classes) for i in range(n_utts_per_class)]
    seeds = utt_seq.spawn(len(jobs))

    def make(job_idx):
        c, i = jobs[job_idx]
        samples, bursts = synth_utterance(spec, bank, c, np.random.default_rng(seeds[job_idx]))
        name = f"{names[c]}_{i:04d}"
        path = out_dir / "wav" / f"{name}.wav"
        write_wav(path, AudioClip(samples, spec.sample_rate_hz))
        return Record(str(path), names[c], samples.size / spec.sample_rate_hz), name, bursts, samples.size

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(make, range(len(jobs))))
    else:
        results = [make(j) for j in range(len(jobs))]

    manifest = Manifest([r[0] for r in results], {lab: i for i, lab in enumerate(sorted(names))})
    write_manifest(out_dir / "manifest.tsv", manifest)
    with open(out_dir / "bursts.tsv", "w") as fh:
        for _, name, bursts, n in results:
            fh.write(f"{name}\t{n}\t" + ",".join(f"{a}-{b}" for a, b in bursts) + "\n")
    return manifest


def read_burst_log(path) -> dict[str, tuple[int, list[tuple[int, int]]]]:
    out = {}
    for line in Path(path).read_text().splitlines():
        name, n, spans = line.split("\t")
        out[name] = (int(n), [tuple(int(v) for v in s.split("-")) for s in spans.split(",") if s])
    return out
