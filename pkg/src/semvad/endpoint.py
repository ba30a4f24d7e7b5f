"""End-of-turn state machine driven by per-chunk Continue/Stop decisions.

Two policies share one machine:

``label``
    Timeouts are already learned into the labels, so EndOfTurn fires on the
    ``m``-th consecutive Stop decision.
``controller``
    A Stop must also be at least ``t_s`` ms after the end of the last chunk
    decided Continue. The binary model cannot tell complete from incomplete
    queries, so only the short timeout is applied here.

Any Continue resets the Stop run and returns the machine to Listening.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

from .errors import ConfigError, ProtocolError
from .neural.model import STOP, StateDecision
from .windowing import ChunkView

LABEL_TIMEOUT = "label"
CONTROLLER_TIMEOUT = "controller"


class Phase(enum.Enum):
    LISTENING = "listening"
    PENDING_STOP = "pending_stop"
    ENDED = "ended"


@dataclass(frozen=True)
class EndpointConfig:
    t_s: int = 400
    t_l: int = 1000
    debounce_chunks: int = 1
    mode: str = LABEL_TIMEOUT

    def __post_init__(self) -> None:
        if self.t_s <= 0:
            raise ConfigError("t_s must be positive", field="t_s_ms")
        if self.t_l < self.t_s:
            raise ConfigError("t_l must be >= t_s", field="t_l_ms")
        if self.debounce_chunks < 1:
            raise ConfigError("debounce_chunks must be >= 1", field="debounce")
        if self.mode not in (LABEL_TIMEOUT, CONTROLLER_TIMEOUT):
            raise ConfigError(f"unknown endpoint mode {self.mode!r}", field="mode")


@dataclass(frozen=True)
class SessionState:
    phase: Phase = Phase.LISTENING
    consecutive_stop_count: int = 0
    last_speech_time: int = 0  # ms
    clock: int = 0  # ms
    last_chunk: int = 0


@dataclass(frozen=True)
class EndpointEvent:
    kind: str  # "none" | "end_of_turn"
    at_chunk: int
    at_time: int  # ms

    @property
    def is_end_of_turn(self) -> bool:
        return self.kind == "end_of_turn"


def endpoint_step(s: SessionState, decision: StateDecision | int, chunk: ChunkView | tuple[int, int],
                  cfg: EndpointConfig) -> tuple[SessionState, EndpointEvent]:
    """Advance the machine by one chunk.

    ``chunk`` may be a :class:`ChunkView` or a ``(chunk_index, end_ms)`` pair.
    """
    if s.phase is Phase.ENDED:
        raise ProtocolError("session already ended")
    index, end_ms = (chunk.chunk_index, chunk.end_ms) if isinstance(chunk, ChunkView) else chunk
    if index <= s.last_chunk:
        raise ProtocolError(f"chunk index {index} not after {s.last_chunk}")
    if end_ms < s.clock:
        raise ProtocolError("clock moved backwards")
    y = decision.y if isinstance(decision, StateDecision) else int(decision)
    s = replace(s, clock=end_ms, last_chunk=index)
    if y != STOP:
        s = replace(s, phase=Phase.LISTENING, consecutive_stop_count=0, last_speech_time=end_ms)
        return s, EndpointEvent("none", index, end_ms)
    s = replace(s, phase=Phase.PENDING_STOP, consecutive_stop_count=s.consecutive_stop_count + 1)
    fire = s.consecutive_stop_count >= cfg.debounce_chunks
    if cfg.mode == CONTROLLER_TIMEOUT:
        fire = fire and s.clock - s.last_speech_time >= cfg.t_s
    if fire:
        return replace(s, phase=Phase.ENDED), EndpointEvent("end_of_turn", index, end_ms)
    return s, EndpointEvent("none", index, end_ms)


class EndpointDetector:
    """Stateful wrapper holding one session's :class:`SessionState`."""

    def __init__(self, cfg: EndpointConfig = EndpointConfig()) -> None:
        self.cfg = cfg
        self.state = SessionState()
        self.end_of_turn: EndpointEvent | None = None

    @property
    def ended(self) -> bool:
        return self.state.phase is Phase.ENDED

    def step(self, decision, chunk) -> EndpointEvent:
        self.state, event = endpoint_step(self.state, decision, chunk, self.cfg)
        if event.is_end_of_turn:
            self.end_of_turn = event
        return event


def first_end_of_turn(decisions, cfg: EndpointConfig, stride_ms: int = 320) -> EndpointEvent | None:
    """Run a whole decision sequence (chunk ``c`` ending at ``c * stride_ms``)."""
    det = EndpointDetector(cfg)
    for c, y in enumerate(decisions, start=1):
        event = det.step(y, (c, c * stride_ms))
        if event.is_end_of_turn:
            return event
    return None
