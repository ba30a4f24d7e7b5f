"""PCM -> fbank -> windows -> decisions -> endpoint events, offline or incremental."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .endpoint import EndpointDetector, EndpointEvent
from .errors import ConfigError
from .features import FbankConfig, PcmBuffer, StreamingFbank, compute_fbank
from .neural.checkpoint import model_from_checkpoint, read_checkpoint
from .neural.model import EndpointModel, StateDecision, classify_chunk
from .windowing import ChunkView, StreamingChunker, chunk_stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChunkResult:
    chunk: int
    lo: int
    hi: int
    end_ms: int
    decision: StateDecision
    event: EndpointEvent | None

    def to_message(self) -> dict:
        return {
            "type": "state",
            "chunk": self.chunk,
            "end_ms": self.end_ms,
            "y": self.decision.y,
            "confidence": self.decision.confidence,
            "event": "end_of_turn" if self.event is not None and self.event.is_end_of_turn else None,
        }

    def same_decision(self, other: "ChunkResult") -> bool:
        return (
            self.chunk == other.chunk
            and self.decision.y == other.decision.y
            and self.decision.confidence == other.decision.confidence
            and self.decision.logits.tobytes() == other.decision.logits.tobytes()
        )


def load_model(path: str | Path, cfg: RunConfig) -> EndpointModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model = model_from_checkpoint(read_checkpoint(path))
    check_compatible(model, cfg)
    return model


def check_compatible(model: EndpointModel, cfg: RunConfig) -> None:
    if model.cfg.k != cfg.k:
        raise ConfigError(f"checkpoint uses k={model.cfg.k}, config says k={cfg.k}", field="k")
    tokens = model.tokens_for(cfg.window.window_frames)
    if tokens > model.cfg.max_audio_tokens:
        raise ConfigError(
            f"window of {cfg.window_ms} ms needs {tokens} tokens; checkpoint supports "
            f"{model.cfg.max_audio_tokens}", field="window_ms")


class _Decider:
    def __init__(self, model: EndpointModel, cfg: RunConfig) -> None:
        self.model = model
        self.detector = EndpointDetector(cfg.endpoint)

    def __call__(self, chunk: ChunkView) -> ChunkResult:
        decision = classify_chunk(self.model, chunk.frames)
        event = None
        # chunks after end-of-turn are still classified but no longer drive the machine
        if not self.detector.ended:
            event = self.detector.step(decision, chunk)
        return ChunkResult(chunk.chunk_index, chunk.lo, chunk.hi, chunk.end_ms, decision, event)

    @property
    def end_of_turn(self) -> EndpointEvent | None:
        return self.detector.end_of_turn


def stream_offline(model: EndpointModel, audio: PcmBuffer, cfg: RunConfig,
                   fbank_cfg: FbankConfig = FbankConfig()) -> list[ChunkResult]:
    decide = _Decider(model, cfg)
    fbank = compute_fbank(audio, fbank_cfg)
    return [decide(chunk) for chunk in chunk_stream(fbank, cfg.window)]


class DecisionSession:
    """Incremental pipeline for one live stream.

    Results are identical to :func:`stream_offline` on the concatenated audio,
    whatever the sizes of the pushed pieces.
    """

    def __init__(self, model: EndpointModel, cfg: RunConfig,
                 fbank_cfg: FbankConfig = FbankConfig()) -> None:
        self.cfg = cfg
        self._fbank = StreamingFbank(fbank_cfg)
        self._chunker = StreamingChunker(cfg.window, fbank_cfg.n_mels)
        self._decide = _Decider(model, cfg)
        self.samples_received = 0
        self._odd_byte = b""
        self.chunks_emitted = 0
        self.finished = False

    @property
    def end_of_turn(self) -> EndpointEvent | None:
        return self._decide.end_of_turn

    def push(self, samples: np.ndarray | bytes) -> list[ChunkResult]:
        if self.finished:
            raise RuntimeError("session already finished")
        if isinstance(samples, (bytes, bytearray, memoryview)):
            # a PCM16 sample may straddle two pieces of the byte stream
            data = self._odd_byte + bytes(samples)
            cut = len(data) - len(data) % 2
            self._odd_byte = data[cut:]
            samples = PcmBuffer.from_bytes(data[:cut]).samples
        self.samples_received += len(samples)
        frames = self._fbank.push(samples)
        return self._run(self._chunker.push(frames))

    def finish(self) -> list[ChunkResult]:
        self.finished = True
        return self._run(self._chunker.finish())

    def _run(self, chunks: list[ChunkView]) -> list[ChunkResult]:
        out = [self._decide(c) for c in chunks]
        self.chunks_emitted += len(out)
        return out
