"""Synthetic labelled corpus.

Each utterance is harmonic-plus-noise "speech" band-limited below 3.4 kHz,
optionally interrupted by digitally silent hesitation gaps, followed by
trailing silence. Complete utterances carry a descending chirp (6.5 -> 4.5
kHz) over their final 200 ms of speech; incomplete ones do not. Labels follow
from the exact speech-end timestamp and the short/long timeouts.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import signal

from .errors import ConfigError
from .features import SAMPLE_RATE, FbankConfig, PcmBuffer, num_frames, read_wav, write_wav
from .windowing import FRAME_MS, WindowConfig, num_chunks, window_bounds

log = logging.getLogger(__name__)

T_SHORT_MS = 400
T_LONG_MS = 1000
CUE_MS = 200
CUE_BAND_HZ = (4500.0, 6500.0)
SPEECH_BAND_HZ = (80.0, 3400.0)
SAMPLES_PER_MS = SAMPLE_RATE // 1000


@dataclass(frozen=True)
class UtteranceSpec:
    """``gaps`` holds ``(position_ms, duration_ms)`` pairs; ``position_ms`` counts
    speech time already rendered when the gap starts."""

    seed: int
    total_speech_ms: int
    complete: bool
    trailing_silence_ms: int = 0
    gaps: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if self.total_speech_ms <= 0:
            raise ConfigError("utterance needs positive speech duration", field="total_speech_ms")
        if self.trailing_silence_ms < 0:
            raise ConfigError("trailing_silence_ms must be >= 0", field="trailing_silence_ms")
        object.__setattr__(self, "gaps", tuple((int(p), int(d)) for p, d in self.gaps))
        last = 0
        for pos, dur in self.gaps:
            if dur <= 0:
                raise ConfigError("gap durations must be positive", field="gaps")
            if not last < pos < self.total_speech_ms:
                raise ConfigError("gaps must be ordered and lie strictly inside the speech span",
                                  field="gaps")
            last = pos

    @property
    def speech_end_ms(self) -> int:
        return self.total_speech_ms + sum(d for _, d in self.gaps)

    @property
    def duration_ms(self) -> int:
        return self.speech_end_ms + self.trailing_silence_ms

    def speech_spans(self) -> list[tuple[int, int]]:
        """Timeline ``[start, end)`` spans in ms that contain speech."""
        spans, t, spoken = [], 0, 0
        for pos, dur in self.gaps:
            spans.append((t, t + pos - spoken))
            t += pos - spoken + dur
            spoken = pos
        spans.append((t, t + self.total_speech_ms - spoken))
        return spans

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gaps"] = [list(g) for g in self.gaps]
        return d


@dataclass
class LabeledUtterance:
    audio: PcmBuffer
    speech_end_ms: int
    complete: bool
    chunk_labels: list[int]
    metadata: dict = field(default_factory=dict)


def _speech_segment(rng: np.random.Generator, n: int, f0: float) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    drift = 1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * drift) / SAMPLE_RATE
    harmonic = np.zeros(n)
    for h in range(1, int(SPEECH_BAND_HZ[1] / (f0 * 1.1)) + 1):
        harmonic += np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h
    sos = signal.butter(4, (300.0, SPEECH_BAND_HZ[1]), btype="bandpass", fs=SAMPLE_RATE, output="sos")
    noise = signal.sosfilt(sos, rng.standard_normal(n + 512))[512:]
    mix = 0.7 * harmonic / (np.std(harmonic) + 1e-9) + 0.5 * noise / (np.std(noise) + 1e-9)
    # syllable-like envelope that never reaches zero inside speech
    env = np.empty(n)
    pos = 0
    while pos < n:
        syl = int(rng.uniform(0.10, 0.26) * SAMPLE_RATE)
        seg = np.hanning(syl + 2)[1:-1]
        take = min(syl, n - pos)
        env[pos : pos + take] = 0.3 + 0.7 * seg[:take]
        pos += take
    fade = min(n // 2, 5 * SAMPLES_PER_MS)
    if fade:
        ramp = np.linspace(0.0, 1.0, fade + 1)[1:]
        env[:fade] *= ramp
        env[n - fade :] *= ramp[::-1]
    return mix * env


def terminal_cue(n: int) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    duration = n / SAMPLE_RATE
    cue = signal.chirp(t, f0=CUE_BAND_HZ[1], t1=duration, f1=CUE_BAND_HZ[0], method="linear")
    return cue * signal.windows.tukey(n, alpha=0.2)


def render(spec: UtteranceSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    f0 = rng.uniform(90.0, 220.0)
    gain = rng.uniform(0.35, 0.9)
    out = np.zeros(spec.duration_ms * SAMPLES_PER_MS)
    for start, end in spec.speech_spans():
        a, b = start * SAMPLES_PER_MS, end * SAMPLES_PER_MS
        out[a:b] = _speech_segment(rng, b - a, f0)
    if spec.complete:
        end = spec.speech_end_ms * SAMPLES_PER_MS
        # the cue may straddle a hesitation gap if the last speech span is short
        n = min(CUE_MS * SAMPLES_PER_MS, end)
        span_start = spec.speech_spans()[-1][0] * SAMPLES_PER_MS
        n = min(n, end - span_start)
        out[end - n : end] += 0.8 * terminal_cue(n)
    peak = np.max(np.abs(out)) if out.size else 0.0
    if peak > 0:
        out *= gain * 32767.0 / peak
    return np.round(out).astype(np.int16)


def annotate_labels(n_samples: int, speech_end_ms: float, complete: bool, cfg: WindowConfig,
                    t_s: int = T_SHORT_MS, t_l: int = T_LONG_MS,
                    fbank: FbankConfig = FbankConfig()) -> list[int]:
    """Per-chunk Stop labels: 1 once a chunk ends at or after speech end plus the timeout."""
    if not 0 <= speech_end_ms <= 1000.0 * n_samples / SAMPLE_RATE:
        raise ConfigError("speech_end_ms lies outside the audio", field="speech_end_ms")
    length = num_frames(n_samples, fbank)
    threshold = speech_end_ms + (t_s if complete else t_l)
    labels = []
    for c in range(1, num_chunks(length, cfg) + 1):
        _, hi = window_bounds(c, cfg, length)
        labels.append(int(hi * FRAME_MS >= threshold))
    return labels


def synth_utterance(spec: UtteranceSpec, cfg: WindowConfig = WindowConfig(),
                    t_s: int = T_SHORT_MS, t_l: int = T_LONG_MS,
                    jitter_ms: float = 0.0) -> LabeledUtterance:
    """Render ``spec`` and label it.

    ``jitter_ms`` perturbs only the timestamp used for labelling (uniform in
    ``[-jitter_ms, jitter_ms]``), mimicking forced-alignment error.
    """
    pcm = PcmBuffer(render(spec))
    label_end = float(spec.speech_end_ms)
    if jitter_ms:
        label_end += np.random.default_rng([spec.seed, 1]).uniform(-jitter_ms, jitter_ms)
        label_end = min(max(label_end, 0.0), spec.duration_ms)
    labels = annotate_labels(len(pcm), label_end, spec.complete, cfg, t_s, t_l)
    meta = {"spec": spec.to_dict(), "no_stop_label": not any(labels)}
    if jitter_ms:
        meta["label_speech_end_ms"] = label_end
    return LabeledUtterance(pcm, spec.speech_end_ms, spec.complete, labels, meta)


def random_spec(rng: np.random.Generator, complete: bool, seed: int) -> UtteranceSpec:
    """Speech 600-2400 ms, 0-2 hesitation gaps of 200-1200 ms, trailing silence 100-3000 ms."""
    speech = int(rng.integers(60, 241)) * 10
    n_gaps = int(rng.integers(0, 3))
    gaps: list[tuple[int, int]] = []
    if n_gaps and speech >= 600:
        positions = np.sort(rng.choice(np.arange(150, speech - 150, 10), size=n_gaps, replace=False))
        positions = [int(p) for p in positions]
        if n_gaps == 2 and positions[1] - positions[0] < 100:
            positions = positions[:1]
        gaps = [(p, int(rng.integers(20, 121)) * 10) for p in positions]
    trailing = int(rng.integers(10, 301)) * 10
    return UtteranceSpec(seed=seed, total_speech_ms=speech, complete=complete,
                         trailing_silence_ms=trailing, gaps=tuple(gaps))


def terminal_cue_score(pcm: np.ndarray, speech_end_ms: int) -> float:
    """Fraction of energy in the cue band over the last 200 ms of speech."""
    end = speech_end_ms * SAMPLES_PER_MS
    seg = pcm[max(0, end - CUE_MS * SAMPLES_PER_MS) : end].astype(np.float64)
    if seg.size < 64:
        return 0.0
    sos = signal.butter(6, (CUE_BAND_HZ[0] - 300, CUE_BAND_HZ[1] + 300), btype="bandpass",
                        fs=SAMPLE_RATE, output="sos")
    band = signal.sosfiltfilt(sos, seg)
    total = float(np.sum(seg**2))
    return float(np.sum(band**2)) / total if total > 0 else 0.0


# ---- corpus on disk ---------------------------------------------------------

@dataclass(frozen=True)
class CorpusConfig:
    stride_ms: int = 320
    window_ms: int = 2560
    t_s_ms: int = T_SHORT_MS
    t_l_ms: int = T_LONG_MS
    test_fraction: float = 0.2
    jitter_ms: float = 0.0

    def __post_init__(self) -> None:
        WindowConfig.from_ms(self.stride_ms, self.window_ms)
        if not 0 < self.t_s_ms <= self.t_l_ms:
            raise ConfigError("require 0 < t_s_ms <= t_l_ms", field="t_l_ms")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in [0, 1)", field="test_fraction")

    @property
    def window(self) -> WindowConfig:
        return WindowConfig.from_ms(self.stride_ms, self.window_ms)


@dataclass
class ManifestEntry:
    wav_path: str
    speech_end_ms: int
    complete: bool
    chunk_labels: list[int]
    stride_ms: int
    window_ms: int
    t_s_ms: int
    t_l_ms: int
    seed: int
    split: str = "train"
    utt_id: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def corpus_specs(n_complete: int, n_incomplete: int, seed: int) -> list[UtteranceSpec]:
    if n_complete < 0 or n_incomplete < 0:
        raise ConfigError("utterance counts must be >= 0", field="n_complete")
    rng = np.random.default_rng(seed)
    flags = [True] * n_complete + [False] * n_incomplete
    seeds = rng.integers(0, 2**31 - 1, size=len(flags))
    return [random_spec(rng, complete, int(s)) for complete, s in zip(flags, seeds)]


def split_assignment(flags: Sequence[bool], test_fraction: float, seed: int) -> list[str]:
    """Stratified, seeded train/test assignment."""
    rng = np.random.default_rng([seed, 2])
    out = ["train"] * len(flags)
    for value in (True, False):
        members = [i for i, f in enumerate(flags) if f == value]
        n_test = int(round(len(members) * test_fraction))
        for i in rng.permutation(members)[:n_test]:
            out[int(i)] = "test"
    return out


def build_corpus(out_dir: str | Path, n_complete: int, n_incomplete: int, seed: int,
                 cfg: CorpusConfig = CorpusConfig(), overwrite: bool = False) -> Path:
    """Write ``wavs/*.wav`` and ``manifest.jsonl`` under ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    manifest = out / "manifest.jsonl"
    if manifest.exists() and not overwrite:
        raise FileExistsError(f"{manifest} exists; pass overwrite=True to replace it")
    (out / "wavs").mkdir(parents=True, exist_ok=True)
    specs = corpus_specs(n_complete, n_incomplete, seed)
    splits = split_assignment([s.complete for s in specs], cfg.test_fraction, seed)
    lines = []
    for i, (spec, split) in enumerate(zip(specs, splits)):
        utt = synth_utterance(spec, cfg.window, cfg.t_s_ms, cfg.t_l_ms, cfg.jitter_ms)
        rel = f"wavs/utt_{i:05d}.wav"
        write_wav(out / rel, utt.audio)
        entry = ManifestEntry(rel, utt.speech_end_ms, utt.complete, utt.chunk_labels,
                              cfg.stride_ms, cfg.window_ms, cfg.t_s_ms, cfg.t_l_ms,
                              spec.seed, split, f"utt_{i:05d}")
        lines.append(entry.to_json())
    manifest.write_text("".join(line + "\n" for line in lines))
    log.info("wrote %d utterances to %s", len(lines), out)
    return manifest


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    entries = []
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entries.append(ManifestEntry.from_dict(json.loads(line)))
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise ConfigError(f"{path}:{n}: bad manifest line ({exc})", field="manifest") from None
    return entries


def relabel(entry: ManifestEntry, n_samples: int, cfg: WindowConfig) -> list[int]:
    """Labels for ``entry`` under a different chunking (e.g. the 160 ms ablation)."""
    return annotate_labels(n_samples, entry.speech_end_ms, entry.complete, cfg,
                           entry.t_s_ms, entry.t_l_ms)


def iter_audio(manifest: str | Path) -> Iterator[tuple[ManifestEntry, PcmBuffer]]:
    root = Path(manifest).parent
    for entry in read_manifest(manifest):
        yield entry, read_wav(root / entry.wav_path)


def expected_chunks(n_samples: int, cfg: WindowConfig) -> int:
    return num_chunks(num_frames(n_samples), cfg)


def ms_to_chunk(ms: float, cfg: WindowConfig) -> int:
    """Smallest regular chunk index whose end time reaches ``ms``."""
    return max(1, math.ceil(ms / cfg.stride_ms))
