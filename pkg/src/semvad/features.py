"""Log-mel filterbank front end (100 Hz frames) and 16 kHz PCM16 WAV I/O."""

from __future__ import annotations

import io
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

SAMPLE_RATE = 16000
FRAME_RATE = 100


@dataclass(frozen=True)
class PcmBuffer:
    """Mono signed 16-bit audio at 16 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    channels: int = 1

    def __post_init__(self) -> None:
        if self.sample_rate != SAMPLE_RATE:
            raise ConfigError(
                f"sample_rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}",
                field="sample_rate",
            )
        if self.channels != 1:
            raise ConfigError(f"channels must be 1, got {self.channels}", field="channels")
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise ConfigError("samples must be one-dimensional", field="samples")
        if samples.dtype != np.int16:
            raise ConfigError(f"samples must be int16, got {samples.dtype}", field="samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_ms(self) -> float:
        return 1000.0 * len(self) / self.sample_rate

    @classmethod
    def from_bytes(cls, data: bytes) -> "PcmBuffer":
        if len(data) % 2:
            raise ConfigError("PCM16 byte stream has odd length", field="samples")
        return cls(np.frombuffer(data, dtype="<i2").astype(np.int16))

    def to_bytes(self) -> bytes:
        return self.samples.astype("<i2").tobytes()


@dataclass(frozen=True)
class FbankConfig:
    n_mels: int = 80
    frame_ms: int = 25
    hop_ms: int = 10
    n_fft: int = 512
    fmin: float = 20.0
    fmax: float = 7600.0
    dither: float = 0.0
    eps: float = 1e-10

    def __post_init__(self) -> None:
        if self.n_mels < 1:
            raise ConfigError("n_mels must be positive", field="n_mels")
        if self.hop_ms != 1000 // FRAME_RATE:
            raise ConfigError("hop_ms must be 10 (100 Hz frames)", field="hop_ms")
        if self.frame_length > self.n_fft:
            raise ConfigError("n_fft shorter than the analysis frame", field="n_fft")
        if not 0.0 <= self.fmin < self.fmax <= SAMPLE_RATE / 2:
            raise ConfigError("mel range must satisfy 0 <= fmin < fmax <= 8000", field="fmax")
        if self.dither != 0.0:
            raise ConfigError("dither is not supported; features must be deterministic", field="dither")
        if self.eps <= 0.0:
            raise ConfigError("eps must be positive", field="eps")

    @property
    def frame_length(self) -> int:
        return SAMPLE_RATE * self.frame_ms // 1000

    @property
    def hop_length(self) -> int:
        return SAMPLE_RATE * self.hop_ms // 1000


@dataclass(frozen=True)
class FbankSequence:
    """``frames`` is an ``[L, n_mels]`` float32 matrix at 100 frames per second."""

    frames: np.ndarray
    frame_rate: int = FRAME_RATE
    n_mels: int = field(default=0)

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2:
            raise ConfigError("fbank frames must be a 2-D matrix", field="frames")
        object.__setattr__(self, "frames", frames)
        if self.n_mels == 0:
            object.__setattr__(self, "n_mels", int(frames.shape[1]))
        elif frames.shape[1] != self.n_mels:
            raise ConfigError("frame width does not match n_mels", field="n_mels")

    def __len__(self) -> int:
        return int(self.frames.shape[0])


def num_frames(n_samples: int, config: FbankConfig = FbankConfig()) -> int:
    if n_samples < config.frame_length:
        return 0
    return 1 + (n_samples - config.frame_length) // config.hop_length


def _hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FbankConfig) -> np.ndarray:
    """Triangular HTK-mel filters as a ``[n_fft // 2 + 1, n_mels]`` matrix."""
    n_bins = config.n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * SAMPLE_RATE / config.n_fft
    edges = _mel_to_hz(
        np.linspace(_hz_to_mel(config.fmin), _hz_to_mel(config.fmax), config.n_mels + 2)
    )
    fb = np.zeros((n_bins, config.n_mels))
    for m in range(config.n_mels):
        left, centre, right = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_hz - left) / (centre - left)
        falling = (right - bin_hz) / (right - centre)
        fb[:, m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


class _FbankKernel:
    """Per-config cached window and filter matrix.

    Every stage is row-independent and bit-reproducible regardless of how many
    frames are processed together. The mel projection uses ``einsum`` without
    BLAS because BLAS results depend on the batch shape.
    """

    def __init__(self, config: FbankConfig) -> None:
        self.config = config
        self.window = _hann(config.frame_length)
        self.filters = mel_filterbank(config)

    def frames_from(self, samples: np.ndarray, n: int) -> np.ndarray:
        cfg = self.config
        if n == 0:
            return np.zeros((0, cfg.n_mels), dtype=np.float32)
        x = samples.astype(np.float64)
        view = np.lib.stride_tricks.sliding_window_view(x, cfg.frame_length)[:: cfg.hop_length][:n]
        spec = np.fft.rfft(view * self.window, n=cfg.n_fft, axis=-1)
        power = spec.real**2 + spec.imag**2
        mel = np.einsum("fk,km->fm", power, self.filters, optimize=False)
        return np.log(np.maximum(mel, cfg.eps)).astype(np.float32)


_KERNELS: dict[FbankConfig, _FbankKernel] = {}


def _kernel(config: FbankConfig) -> _FbankKernel:
    kernel = _KERNELS.get(config)
    if kernel is None:
        kernel = _KERNELS[config] = _FbankKernel(config)
    return kernel


def compute_fbank(audio: PcmBuffer, config: FbankConfig = FbankConfig()) -> FbankSequence:
    """Log-mel energies of every complete 25 ms frame, hop 10 ms.

    A trailing partial frame is never padded, so the result for any prefix of
    a stream equals the prefix of the result for the whole stream.
    """
    if not isinstance(audio, PcmBuffer):
        raise ConfigError("compute_fbank expects a PcmBuffer", field="audio")
    n = num_frames(len(audio), config)
    frames = _kernel(config).frames_from(audio.samples, n)
    return FbankSequence(frames, n_mels=config.n_mels)


class StreamingFbank:
    """Incremental front end: feed PCM pieces, receive newly completed frames."""

    def __init__(self, config: FbankConfig = FbankConfig()) -> None:
        self.config = config
        self._kernel = _kernel(config)
        self._pending = np.zeros(0, dtype=np.int16)
        self.frames_emitted = 0

    def push(self, samples: np.ndarray) -> np.ndarray:
        samples = np.asarray(samples, dtype=np.int16)
        buf = np.concatenate([self._pending, samples]) if self._pending.size else samples
        n = num_frames(buf.shape[0], self.config)
        out = self._kernel.frames_from(buf, n)
        # keep the unconsumed tail plus the overlap needed by the next frame
        self._pending = buf[n * self.config.hop_length :].copy()
        self.frames_emitted += n
        return out


def read_wav(path: str | Path) -> PcmBuffer:
    """Read a RIFF WAV that must be PCM (format tag 1), mono, 16-bit, 16 kHz."""
    data = Path(path).read_bytes()
    return parse_wav(data, source=str(path))


def parse_wav(data: bytes, source: str = "<bytes>") -> PcmBuffer:
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise ConfigError(f"{source}: not a RIFF/WAVE file", field="riff_header")
    pos = 12
    fmt = None
    pcm = None
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise ConfigError(f"{source}: fmt chunk too short", field="fmt")
            fmt = struct.unpack_from("<HHIIHH", body)
        elif chunk_id == b"data":
            pcm = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise ConfigError(f"{source}: missing fmt chunk", field="fmt")
    format_tag, channels, rate, _, _, bits = fmt
    if format_tag != 1:
        raise ConfigError(f"{source}: format_tag {format_tag} is not PCM (1)", field="format_tag")
    if channels != 1:
        raise ConfigError(f"{source}: channels {channels}, expected 1", field="channels")
    if rate != SAMPLE_RATE:
        raise ConfigError(f"{source}: sample_rate {rate}, expected {SAMPLE_RATE}", field="sample_rate")
    if bits != 16:
        raise ConfigError(f"{source}: bits_per_sample {bits}, expected 16", field="bits_per_sample")
    if pcm is None:
        raise ConfigError(f"{source}: missing data chunk", field="data")
    return PcmBuffer.from_bytes(pcm[: len(pcm) - len(pcm) % 2])


def wav_bytes(audio: PcmBuffer) -> bytes:
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(audio.to_bytes())
    return buf.getvalue()


def write_wav(path: str | Path, audio: PcmBuffer) -> None:
    Path(path).write_bytes(wav_bytes(audio))
