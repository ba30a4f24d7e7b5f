import asyncio
import base64
import json

import numpy as np
import pytest

from semvad.config import RunConfig
from semvad.corpus import UtteranceSpec, render
from semvad.features import PcmBuffer
from semvad.pipeline import DecisionSession, stream_offline
from semvad.service import EndpointServer, encode, stream_pcm

CFG = RunConfig()


def _audio(seed=0, speech=1200, trailing=800):
    return PcmBuffer(render(UtteranceSpec(seed=seed, total_speech_ms=speech, complete=True,
                                          trailing_silence_ms=trailing)))


def _expected(model, audio, cfg=CFG):
    return [r.to_message() for r in stream_offline(model, audio, cfg)]


def _states(replies):
    return [m for m in replies if m["type"] == "state"]


async def _with_server(model, fn, cfg=CFG):
    server = EndpointServer(model, cfg)
    host, port = await server.start()
    try:
        return await fn(host, port)
    finally:
        await server.close()


def _pieces(data: bytes, size: int) -> list[bytes]:
    return [data[i : i + size] for i in range(0, len(data), size)]


def test_session_matches_offline_for_odd_byte_splits(tiny_model):
    audio = _audio(1)
    data = audio.to_bytes()
    expected = stream_offline(tiny_model, audio, CFG)
    for size in (1, 3, 641, 5119, len(data)):
        session = DecisionSession(tiny_model, CFG)
        got = []
        for piece in _pieces(data, size):
            got += session.push(piece)
        got += session.finish()
        assert len(got) == len(expected)
        assert all(a.same_decision(b) for a, b in zip(got, expected))


def test_twenty_ms_pieces_over_tcp(tiny_model):
    audio = _audio(2, speech=1500, trailing=500)
    replies = asyncio.run(_with_server(
        tiny_model, lambda h, p: stream_pcm(h, p, _pieces(audio.to_bytes(), 640))))
    assert replies[0]["type"] == "ready"
    assert _states(replies) == _expected(tiny_model, audio)
    assert replies[-1]["type"] == "bye"
    assert replies[-1]["chunks"] == len(_states(replies))


def test_end_right_after_hello(tiny_model):
    replies = asyncio.run(_with_server(tiny_model, lambda h, p: stream_pcm(h, p, [])))
    assert [m["type"] for m in replies] == ["ready", "bye"]
    assert replies[-1]["chunks"] == 0 and replies[-1]["end_of_turn"] is None


def test_concurrent_sessions_are_isolated(tiny_model):
    a, b = _audio(3), _audio(4, speech=2000, trailing=1500)

    async def both(host, port):
        return await asyncio.gather(
            stream_pcm(host, port, _pieces(a.to_bytes(), 1000), session="A"),
            stream_pcm(host, port, _pieces(b.to_bytes(), 777), session="B"),
        )

    ra, rb = asyncio.run(_with_server(tiny_model, both))
    assert ra[0]["session"] == "A" and rb[0]["session"] == "B"
    assert _states(ra) == _expected(tiny_model, a)
    assert _states(rb) == _expected(tiny_model, b)
    for replies in (ra, rb):
        chunks = [m["chunk"] for m in _states(replies)]
        assert chunks == sorted(set(chunks))


async def _raw_exchange(host, port, lines: list[bytes], until_close: bool = False) -> list[dict]:
    reader, writer = await asyncio.open_connection(host, port)
    for line in lines:
        writer.write(line)
    await writer.drain()
    replies = []
    while True:
        line = await asyncio.wait_for(reader.readline(), timeout=10)
        if not line:
            break
        replies.append(json.loads(line))
        if replies[-1]["type"] == "bye" and not until_close:
            break
    writer.close()
    return replies


def test_malformed_json_keeps_session_alive(tiny_model):
    pcm = base64.b64encode(_audio(5, speech=600, trailing=400).to_bytes()).decode()
    lines = [encode({"type": "hello", "version": 1}), b"{not json\n",
             encode({"type": "audio", "pcm": pcm}), encode({"type": "end"})]

    async def go(h, p):
        reader, writer = await asyncio.open_connection(h, p)
        for line in lines:
            writer.write(line)
        await writer.drain()
        out = []
        while not out or out[-1]["type"] != "bye":
            out.append(json.loads(await asyncio.wait_for(reader.readline(), 10)))
        writer.close()
        return out

    replies = asyncio.run(_with_server(tiny_model, go))
    kinds = [m["type"] for m in replies]
    assert kinds[:2] == ["ready", "error"]
    assert kinds[-1] == "bye" and "state" in kinds


def test_audio_after_end_closes_session(tiny_model):
    lines = [encode({"type": "hello"}), encode({"type": "end"}),
             encode({"type": "audio", "pcm": ""})]
    replies = asyncio.run(_with_server(tiny_model, lambda h, p: _raw_exchange(h, p, lines, True)))
    assert [m["type"] for m in replies] == ["ready", "bye", "error"]
    assert "after end" in replies[-1]["message"]


def test_audio_before_hello_and_bad_version(tiny_model):
    lines = [encode({"type": "audio", "pcm": ""}), encode({"type": "hello", "version": 99})]
    replies = asyncio.run(_with_server(tiny_model, lambda h, p: _raw_exchange(h, p, lines, True)))
    assert [m["type"] for m in replies] == ["error", "error"]
    assert "version" in replies[-1]["message"]


def test_bad_base64_and_unknown_type(tiny_model):
    lines = [encode({"type": "hello"}), encode({"type": "audio", "pcm": "@@@"}),
             encode({"type": "shout"}), encode({"type": "end"})]
    replies = asyncio.run(_with_server(tiny_model, lambda h, p: _raw_exchange(h, p, lines)))
    assert [m["type"] for m in replies] == ["ready", "error", "error", "bye"]


def test_finished_session_refuses_audio(tiny_model):
    session = DecisionSession(tiny_model, CFG)
    session.finish()
    with pytest.raises(RuntimeError):
        session.push(np.zeros(10, np.int16))
