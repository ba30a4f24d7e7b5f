import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semvad.errors import ConfigError
from semvad.features import (
    FbankConfig,
    PcmBuffer,
    StreamingFbank,
    compute_fbank,
    mel_filterbank,
    num_frames,
    parse_wav,
    read_wav,
    wav_bytes,
    write_wav,
)


def brute_force_frames(n_samples, frame=400, hop=160):
    return sum(1 for start in range(0, n_samples, hop) if start + frame <= n_samples)


def noise(rng, n, scale=3000):
    return PcmBuffer(np.clip(rng.normal(0, scale, n), -32768, 32767).astype(np.int16))


def test_frame_count_law_matches_brute_force():
    for n in range(0, 48001):
        assert num_frames(n) == brute_force_frames(n), n


def test_one_second_gives_98_frames_of_80_bins(rng):
    fb = compute_fbank(noise(rng, 16000))
    assert fb.frames.shape == (98, 80)
    assert fb.frame_rate == 100
    assert np.isfinite(fb.frames).all()


def test_below_one_frame_is_empty(rng):
    fb = compute_fbank(noise(rng, 399))
    assert len(fb) == 0
    assert fb.frames.shape == (0, 80)


def test_empty_stream():
    assert len(compute_fbank(PcmBuffer(np.zeros(0, dtype=np.int16)))) == 0


def test_silence_hits_log_floor():
    fb = compute_fbank(PcmBuffer(np.zeros(4000, dtype=np.int16)), FbankConfig(eps=1e-10))
    assert np.all(fb.frames == np.float32(np.log(1e-10)))


def test_deterministic(rng):
    audio = noise(rng, 12345)
    assert compute_fbank(audio).frames.tobytes() == compute_fbank(audio).frames.tobytes()


def test_shift_by_one_hop(rng):
    x = noise(rng, 8000).samples
    x[:240] = 0  # makes the new leading frame pure silence
    shifted = PcmBuffer(np.concatenate([np.zeros(160, dtype=np.int16), x]))
    a = compute_fbank(PcmBuffer(x)).frames
    b = compute_fbank(shifted).frames
    assert b.shape[0] == a.shape[0] + 1
    np.testing.assert_allclose(b[1:], a, atol=1e-6, rtol=0)
    assert np.all(b[0] == np.float32(np.log(1e-10)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(400, 6000))
def test_doubling_amplitude_never_lowers_energy(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 2000, n).clip(-16000, 16000).astype(np.int16)
    a = compute_fbank(PcmBuffer(x)).frames
    b = compute_fbank(PcmBuffer((x * 2).astype(np.int16))).frames
    assert np.all(b >= a)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 9000),
       cuts=st.lists(st.integers(0, 9000), max_size=12))
def test_streaming_front_end_is_bit_identical(seed, n, cuts):
    x = noise(np.random.default_rng(seed), n).samples
    bounds = sorted({0, n, *[c for c in cuts if c <= n]})
    stream = StreamingFbank()
    parts = [stream.push(x[a:b]) for a, b in zip(bounds, bounds[1:])]
    online = np.concatenate(parts) if parts else np.zeros((0, 80), np.float32)
    offline = compute_fbank(PcmBuffer(x)).frames
    assert online.shape == offline.shape
    assert online.tobytes() == offline.tobytes()


def test_filterbank_shape_and_coverage():
    fb = mel_filterbank(FbankConfig())
    assert fb.shape == (257, 80)
    assert (fb >= 0).all()
    assert (fb.max(axis=0) > 0).all()
    bin_hz = np.arange(257) * 16000 / 512
    assert fb[bin_hz < 20].sum() == 0
    assert fb[bin_hz > 7600].sum() == 0


@pytest.mark.parametrize("kwargs,field", [
    ({"sample_rate": 8000}, "sample_rate"),
    ({"channels": 2}, "channels"),
])
def test_pcm_buffer_rejects_bad_format(kwargs, field):
    with pytest.raises(ConfigError) as err:
        PcmBuffer(np.zeros(10, dtype=np.int16), **kwargs)
    assert err.value.field == field


def test_config_rejects_dither():
    with pytest.raises(ConfigError):
        FbankConfig(dither=1.0)


def test_wav_round_trip(tmp_path, rng):
    audio = noise(rng, 5000)
    write_wav(tmp_path / "a.wav", audio)
    back = read_wav(tmp_path / "a.wav")
    assert np.array_equal(back.samples, audio.samples)


def _wav(format_tag=1, channels=1, rate=16000, bits=16, data=b"\x00\x00" * 10):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", format_tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_handmade_wav_parses():
    assert len(parse_wav(_wav())) == 10
    assert parse_wav(wav_bytes(PcmBuffer(np.arange(7, dtype=np.int16)))).samples.tolist() == list(range(7))


@pytest.mark.parametrize("kwargs,field", [
    ({"format_tag": 3}, "format_tag"),
    ({"channels": 2}, "channels"),
    ({"rate": 44100}, "sample_rate"),
    ({"bits": 8}, "bits_per_sample"),
])
def test_wav_rejects_other_formats(kwargs, field):
    with pytest.raises(ConfigError) as err:
        parse_wav(_wav(**kwargs))
    assert err.value.field == field
    assert field in str(err.value)


def test_not_riff():
    with pytest.raises(ConfigError):
        parse_wav(b"OggS" + b"\x00" * 40)
