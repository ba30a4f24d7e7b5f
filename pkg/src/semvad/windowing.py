"""Sliding-window chunking over a 100 Hz fbank sequence.

Chunk ``c`` (1-based) ends at ``hi = min(c * stride, L)`` and starts at
``lo = max(0, hi - window)``; the frame interval is half-open ``[lo, hi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConfigError
from .features import FRAME_RATE, FbankSequence

FRAME_MS = 1000 // FRAME_RATE


@dataclass(frozen=True)
class WindowConfig:
    stride_frames: int = 32
    window_frames: int = 256

    def __post_init__(self) -> None:
        if self.stride_frames < 1:
            raise ConfigError("stride_frames must be >= 1", field="stride_frames")
        if self.window_frames < self.stride_frames:
            raise ConfigError("window_frames must be >= stride_frames", field="window_frames")

    @classmethod
    def from_ms(cls, stride_ms: int, window_ms: int) -> "WindowConfig":
        for name, value in (("stride_ms", stride_ms), ("window_ms", window_ms)):
            if value <= 0 or value % FRAME_MS:
                raise ConfigError(f"{name} must be a positive multiple of {FRAME_MS} ms", field=name)
        return cls(stride_ms // FRAME_MS, window_ms // FRAME_MS)

    @property
    def stride_ms(self) -> int:
        return self.stride_frames * FRAME_MS

    @property
    def window_ms(self) -> int:
        return self.window_frames * FRAME_MS


@dataclass(frozen=True)
class ChunkView:
    chunk_index: int
    lo: int
    hi: int
    frames: np.ndarray

    @property
    def end_time(self) -> float:
        """Seconds from stream start to the chunk's last frame boundary."""
        return self.hi / FRAME_RATE

    @property
    def end_ms(self) -> int:
        return self.hi * FRAME_MS

    def __len__(self) -> int:
        return self.hi - self.lo

    def same_as(self, other: "ChunkView") -> bool:
        return (
            self.chunk_index == other.chunk_index
            and self.lo == other.lo
            and self.hi == other.hi
            and self.frames.dtype == other.frames.dtype
            and self.frames.tobytes() == other.frames.tobytes()
        )


def window_bounds(c: int, cfg: WindowConfig, length: int) -> tuple[int, int]:
    if c < 1:
        raise ValueError(f"chunk index must be >= 1, got {c}")
    if length < 0:
        raise ValueError("sequence length must be non-negative")
    hi = min(c * cfg.stride_frames, length)
    return max(0, hi - cfg.window_frames), hi


def num_chunks(length: int, cfg: WindowConfig) -> int:
    return math.ceil(length / cfg.stride_frames) if length > 0 else 0


def chunk_stream(fbank: FbankSequence | np.ndarray, cfg: WindowConfig) -> Iterator[ChunkView]:
    frames = fbank.frames if isinstance(fbank, FbankSequence) else np.asarray(fbank)
    length = frames.shape[0]
    for c in range(1, num_chunks(length, cfg) + 1):
        lo, hi = window_bounds(c, cfg, length)
        yield ChunkView(c, lo, hi, frames[lo:hi])


class StreamingChunker:
    """Emit chunks as frames arrive.

    Chunk ``c`` is released once frame ``c * stride`` exists; the final partial
    chunk is released by :meth:`finish`. Only the last ``window_frames`` frames
    are retained.
    """

    def __init__(self, cfg: WindowConfig, n_mels: int) -> None:
        self.cfg = cfg
        self._buf = np.zeros((0, n_mels), dtype=np.float32)
        self._offset = 0  # absolute index of _buf[0]
        self._next_chunk = 1
        self._finished = False

    @property
    def total_frames(self) -> int:
        return self._offset + self._buf.shape[0]

    def _view(self, c: int, length: int) -> ChunkView:
        lo, hi = window_bounds(c, self.cfg, length)
        frames = self._buf[lo - self._offset : hi - self._offset].copy()
        return ChunkView(c, lo, hi, frames)

    def push(self, frames: np.ndarray) -> list[ChunkView]:
        if self._finished:
            raise RuntimeError("push after finish")
        if frames.shape[0]:
            self._buf = np.concatenate([self._buf, frames.astype(np.float32, copy=False)])
        out = []
        while self._next_chunk * self.cfg.stride_frames <= self.total_frames:
            c = self._next_chunk
            out.append(self._view(c, c * self.cfg.stride_frames))
            self._next_chunk += 1
        # the next window (possibly the tail) starts no earlier than this
        next_hi = min(self._next_chunk * self.cfg.stride_frames, self.total_frames)
        keep_from = max(0, next_hi - self.cfg.window_frames)
        drop = keep_from - self._offset
        if drop > 0:
            self._buf = self._buf[drop:]
            self._offset = keep_from
        return out

    def finish(self) -> list[ChunkView]:
        """Flush the tail chunk ending at the last frame, if one is pending."""
        self._finished = True
        length = self.total_frames
        if num_chunks(length, self.cfg) >= self._next_chunk:
            c = self._next_chunk
            self._next_chunk += 1
            return [self._view(c, length)]
        return []
