"""Line-delimited JSON streaming service over TCP.

Client messages::

    {"type": "hello", "version": 1, "session": "optional-id"}
    {"type": "audio", "pcm": "<base64 little-endian PCM16, 16 kHz mono>"}
    {"type": "end"}

Server messages::

    {"type": "ready", "version": 1, "session": ..., "stride_ms": ..., "window_ms": ...}
    {"type": "state", "chunk": c, "end_ms": ..., "y": 0|1, "confidence": ..., "event": null|"end_of_turn"}
    {"type": "error", "message": ...}
    {"type": "bye", "chunks": n, "end_of_turn": null|{"chunk": c, "time_ms": t}}
"""

from __future__ import annotations

import asyncio
import base64
import binascii
import itertools
import json
import logging
import signal
import time
from typing import Iterable, Sequence

from .config import RunConfig
from .neural.model import EndpointModel
from .pipeline import ChunkResult, DecisionSession

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
MAX_LINE_BYTES = 16 * 1024 * 1024


def encode(msg: dict) -> bytes:
    return (json.dumps(msg, separators=(",", ":")) + "\n").encode()


class _Connection:
    def __init__(self, server: "EndpointServer", reader: asyncio.StreamReader,
                 writer: asyncio.StreamWriter, default_id: str) -> None:
        self.server = server
        self.reader = reader
        self.writer = writer
        self.session_id = default_id
        self.session: DecisionSession | None = None
        self.ended = False

    async def send(self, msg: dict) -> None:
        self.writer.write(encode(msg))
        await self.writer.drain()

    async def error(self, message: str) -> None:
        log.warning("[%s] %s", self.session_id, message)
        await self.send({"type": "error", "message": message})

    async def emit(self, results: Iterable[ChunkResult], arrived: float) -> None:
        stride_s = self.server.cfg.stride_ms / 1000.0
        for r in results:
            lag = time.perf_counter() - arrived
            if lag > stride_s:
                log.warning("[%s] chunk %d decided %.0f ms after its audio arrived (deadline %d ms)",
                            self.session_id, r.chunk, lag * 1000, self.server.cfg.stride_ms)
            await self.send(r.to_message())

    async def run(self) -> None:
        while True:
            try:
                line = await self.reader.readline()
            except (asyncio.LimitOverrunError, ValueError):
                await self.error("line too long")
                return
            except ConnectionError:
                return
            if not line:
                return
            if not line.strip():
                continue
            arrived = time.perf_counter()
            try:
                msg = json.loads(line)
                if not isinstance(msg, dict):
                    raise ValueError("message must be a JSON object")
            except ValueError as exc:
                await self.error(f"malformed message: {exc}")
                continue
            if self.ended:
                await self.error(f"protocol error: {msg.get('type')!r} after end; closing session")
                return
            if not await self.dispatch(msg, arrived):
                return

    async def dispatch(self, msg: dict, arrived: float) -> bool:
        kind = msg.get("type")
        if kind == "hello":
            if self.session is not None:
                await self.error("duplicate hello")
                return True
            version = msg.get("version", PROTOCOL_VERSION)
            if version != PROTOCOL_VERSION:
                await self.error(f"unsupported protocol version {version!r}")
                return False
            if isinstance(msg.get("session"), str) and msg["session"]:
                self.session_id = msg["session"]
            self.session = DecisionSession(self.server.model, self.server.cfg)
            log.info("[%s] session opened", self.session_id)
            await self.send({
                "type": "ready", "version": PROTOCOL_VERSION, "session": self.session_id,
                "stride_ms": self.server.cfg.stride_ms, "window_ms": self.server.cfg.window_ms,
                "sample_rate": 16000,
            })
            return True
        if self.session is None:
            await self.error("send hello before audio or end")
            return True
        if kind == "audio":
            try:
                pcm = base64.b64decode(msg.get("pcm", ""), validate=True)
            except (binascii.Error, TypeError, ValueError) as exc:
                await self.error(f"bad base64 audio: {exc}")
                return True
            results = await asyncio.to_thread(self.session.push, pcm)
            await self.emit(results, arrived)
            return True
        if kind == "end":
            results = await asyncio.to_thread(self.session.finish)
            await self.emit(results, arrived)
            eot = self.session.end_of_turn
            await self.send({
                "type": "bye",
                "chunks": self.session.chunks_emitted,
                "end_of_turn": None if eot is None else {"chunk": eot.at_chunk, "time_ms": eot.at_time},
            })
            log.info("[%s] session ended after %d chunks", self.session_id, self.session.chunks_emitted)
            self.ended = True
            return True
        await self.error(f"unknown message type {kind!r}")
        return True


class EndpointServer:
    """Accepts any number of concurrent sessions sharing one read-only model."""

    def __init__(self, model: EndpointModel, cfg: RunConfig, host: str = "127.0.0.1", port: int = 0) -> None:
        self.model = model
        self.cfg = cfg
        self.host = host
        self.port = port
        self._server: asyncio.base_events.Server | None = None
        self._ids = itertools.count(1)

    async def start(self) -> tuple[str, int]:
        self._server = await asyncio.start_server(self._handle, self.host, self.port, limit=MAX_LINE_BYTES)
        host, port = self._server.sockets[0].getsockname()[:2]
        self.port = port
        log.info("listening on %s:%d", host, port)
        return host, port

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        conn = _Connection(self, reader, writer, f"s{next(self._ids)}")
        try:
            await conn.run()
        except Exception:
            log.exception("[%s] session failed", conn.session_id)
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except ConnectionError:
                pass

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()


def serve(model: EndpointModel, cfg: RunConfig, host: str, port: int) -> None:
    """Run until SIGINT/SIGTERM."""

    async def main() -> None:
        server = EndpointServer(model, cfg, host, port)
        await server.start()
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
        await stop.wait()
        await server.close()

    asyncio.run(main())


async def stream_pcm(host: str, port: int, pieces: Sequence[bytes], session: str | None = None) -> list[dict]:
    """Minimal client: send hello, every piece, end; collect replies until ``bye``."""
    reader, writer = await asyncio.open_connection(host, port, limit=MAX_LINE_BYTES)

    async def collect() -> list[dict]:
        replies = []
        while True:
            line = await reader.readline()
            if not line:
                return replies
            msg = json.loads(line)
            replies.append(msg)
            if msg["type"] == "bye":
                return replies

    # read concurrently so a slow reader never stalls the server's writes
    collector = asyncio.create_task(collect())
    hello = {"type": "hello", "version": PROTOCOL_VERSION}
    if session:
        hello["session"] = session
    writer.write(encode(hello))
    for piece in pieces:
        writer.write(encode({"type": "audio", "pcm": base64.b64encode(piece).decode()}))
        await writer.drain()
    writer.write(encode({"type": "end"}))
    await writer.drain()
    replies = await collector
    writer.close()
    await writer.wait_closed()
    return replies
