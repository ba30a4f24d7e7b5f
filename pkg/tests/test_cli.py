import json

import numpy as np
import pytest

from semvad.cli import main
from semvad.corpus import UtteranceSpec, annotate_labels, synth_utterance
from semvad.features import write_wav
from semvad.neural import checkpoint_from_model, write_checkpoint
from semvad.neural.model import StateDecision
from semvad.windowing import WindowConfig


@pytest.fixture
def ckpt(tmp_path, tiny_model):
    path = tmp_path / "tiny.ckpt"
    write_checkpoint(path, checkpoint_from_model(tiny_model))
    return path


def test_eval_counts_prints_accuracy(tmp_path, capsys):
    counts = tmp_path / "counts.json"
    counts.write_text(json.dumps({"counts": [[1784, 216], [101, 19662]]}))
    assert main(["eval", "--counts", str(counts)]) == 0
    out = capsys.readouterr().out
    assert "0.985" in out
    report = json.loads(out[out.index("{"):])
    assert round(report["accuracy"], 3) == 0.985


def test_synth_empty_corpus(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "c"), "--n-complete", "0", "--n-incomplete", "0"]) == 0
    assert (tmp_path / "c" / "manifest.jsonl").read_text() == ""


def test_synth_refuses_overwrite(tmp_path, capsys):
    args = ["synth", "--out", str(tmp_path), "--n-complete", "1", "--n-incomplete", "0"]
    assert main(args) == 0
    assert main(args) == 2
    assert main(args + ["--overwrite"]) == 0


@pytest.mark.parametrize("content,field", [
    ('{"stride_ms": 325}', "stride_ms"),
    ('{"t_s_ms": 2000}', "t_l_ms"),
    ('{"bogus": 1}', "bogus"),
    ('{"mode": "magic"}', "mode"),
    ("not json", "config"),
])
def test_bad_config_exits_2_with_field(tmp_path, capsys, content, field):
    cfg = tmp_path / "run.json"
    cfg.write_text(content)
    code = main(["synth", "--out", str(tmp_path / "c"), "--config", str(cfg)])
    assert code == 2
    assert f"[{field}]" in capsys.readouterr().err


def test_toml_config(tmp_path, ckpt, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text('stride_ms = 160\nwindow_ms = 2560\n')
    wav = tmp_path / "a.wav"
    write_wav(wav, synth_utterance(UtteranceSpec(1, 800, True, 400)).audio)
    assert main(["stream", str(wav), "--config", str(cfg), "--checkpoint", str(ckpt)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert json.loads(lines[0])["end_ms"] == 160


def test_missing_checkpoint_exits_2(tmp_path, capsys):
    wav = tmp_path / "a.wav"
    write_wav(wav, synth_utterance(UtteranceSpec(1, 800, True, 400)).audio)
    assert main(["stream", str(wav), "--checkpoint", str(tmp_path / "nope.ckpt")]) == 2
    assert main(["stream", str(wav)]) == 2


def test_corrupt_checkpoint_exits_3(tmp_path, ckpt, capsys):
    data = bytearray(ckpt.read_bytes())
    data[-50] ^= 1
    ckpt.write_bytes(bytes(data))
    wav = tmp_path / "a.wav"
    write_wav(wav, synth_utterance(UtteranceSpec(1, 800, True, 400)).audio)
    assert main(["stream", str(wav), "--checkpoint", str(ckpt)]) == 3


def test_stream_with_perfect_model_ends_turn_at_chunk_5(tmp_path, ckpt, capsys, monkeypatch):
    utt = synth_utterance(UtteranceSpec(seed=2, total_speech_ms=1000, complete=True, trailing_silence_ms=2000))
    wav = tmp_path / "u.wav"
    write_wav(wav, utt.audio)
    truth = iter(annotate_labels(len(utt.audio), 1000, True, WindowConfig()))

    def perfect(model, frames):
        return StateDecision(next(truth), np.zeros((2, 3), np.float32), 1.0)

    monkeypatch.setattr("semvad.pipeline.classify_chunk", perfect)
    assert main(["stream", str(wav), "--checkpoint", str(ckpt)]) == 0
    lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    summary = lines[-1]
    assert summary["type"] == "summary"
    assert summary["end_of_turn"] == {"chunk": 5, "time_ms": 1600}
    assert summary["chunks"] == len(lines) - 1
    assert [m["event"] for m in lines[:-1]].count("end_of_turn") == 1


def test_train_and_eval_round_trip(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--n-complete", "3", "--n-incomplete", "2"]) == 0
    manifest = tmp_path / "manifest.jsonl"
    out = tmp_path / "m.ckpt"
    assert main(["train", "--manifest", str(manifest), "--out", str(out), "--epochs", "0.5"]) == 0
    assert out.exists()
    report = tmp_path / "report.json"
    assert main(["eval", "--manifest", str(manifest), "--split", "train", "--checkpoint", str(out),
                 "--json", str(report)]) == 0
    data = json.loads(report.read_text())
    assert sum(map(sum, data["confusion"])) > 0


def test_train_on_empty_split_is_config_error(tmp_path, capsys):
    main(["synth", "--out", str(tmp_path), "--n-complete", "0", "--n-incomplete", "0"])
    code = main(["train", "--manifest", str(tmp_path / "manifest.jsonl"), "--out", str(tmp_path / "m")])
    assert code == 2
