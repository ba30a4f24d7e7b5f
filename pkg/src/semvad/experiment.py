"""Corpus-level train/evaluate runs, including the stride ablation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .corpus import ManifestEntry, iter_audio, relabel
from .evaluation import EvalItem, EvalResult, evaluate
from .features import compute_fbank
from .neural.model import ModelConfig
from .neural.train import ChunkDataset, TrainConfig, TrainResult, train
from .windowing import WindowConfig

log = logging.getLogger(__name__)


@dataclass
class Utterance:
    entry: ManifestEntry
    features: np.ndarray
    n_samples: int


def load_features(manifest: str | Path, split: str | None = None) -> list[Utterance]:
    out = []
    for entry, pcm in iter_audio(manifest):
        if split is not None and entry.split != split:
            continue
        out.append(Utterance(entry, compute_fbank(pcm).frames, len(pcm)))
    return out


def labels_for(utts: Sequence[Utterance], wcfg: WindowConfig) -> list[list[int]]:
    """Manifest labels when strides agree, otherwise re-derived from the timestamps."""
    out = []
    for u in utts:
        if u.entry.stride_ms == wcfg.stride_ms and u.entry.window_ms == wcfg.window_ms:
            out.append(list(u.entry.chunk_labels))
        else:
            out.append(relabel(u.entry, u.n_samples, wcfg))
    return out


def training_set(utts: Sequence[Utterance], wcfg: WindowConfig) -> ChunkDataset:
    return ChunkDataset.from_utterances([u.features for u in utts], labels_for(utts, wcfg), wcfg)


def eval_items(utts: Sequence[Utterance], wcfg: WindowConfig) -> list[EvalItem]:
    return [
        EvalItem(u.features, labels, wcfg.stride_ms, u.entry.utt_id)
        for u, labels in zip(utts, labels_for(utts, wcfg))
    ]


def model_config_for(cfg: RunConfig) -> ModelConfig:
    return ModelConfig.for_window(cfg.window.window_frames, k=cfg.k)


@dataclass
class ExperimentResult:
    run: RunConfig
    trained: TrainResult
    evaluation: EvalResult
    train_seconds: float
    eval_seconds: float


def run_experiment(train_utts: Sequence[Utterance], test_utts: Sequence[Utterance],
                   cfg: RunConfig, train_cfg: TrainConfig) -> ExperimentResult:
    wcfg = cfg.window
    dataset = training_set(train_utts, wcfg)
    log.info("stride %d ms: %d training windows (%.1f%% stop)",
             cfg.stride_ms, len(dataset), 100.0 * dataset.labels.mean())
    t0 = time.perf_counter()
    trained = train(dataset, model_config_for(cfg), train_cfg, wcfg)
    t1 = time.perf_counter()
    evaluation = evaluate(trained.model, eval_items(test_utts, wcfg), wcfg)
    t2 = time.perf_counter()
    return ExperimentResult(cfg, trained, evaluation, t1 - t0, t2 - t1)


def ablation_table(results: Sequence[ExperimentResult]) -> str:
    """Side-by-side per-class precision/recall/F1 for each configuration."""
    header = ["Config", "Stop P", "Stop R", "Stop F1", "Cont P", "Cont R", "Cont F1", "Acc", "p95 ms"]
    rows = [header]
    for r in results:
        rep = r.evaluation.report
        rows.append([
            f"{r.run.stride_ms} ms chunk",
            *(f"{rep.precision[c]:.3f}" if m == "p" else f"{rep.recall[c]:.3f}" if m == "r" else f"{rep.f1[c]:.3f}"
              for c in ("stop", "continue") for m in ("p", "r", "f")),
            f"{rep.accuracy:.3f}",
            f"{rep.latency.p95_ms:.2f}" if rep.latency else "-",
        ])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = [" | ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
             for row in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)


def summary(result: ExperimentResult) -> dict:
    rep = result.evaluation.report
    return {
        "stride_ms": result.run.stride_ms,
        "window_ms": result.run.window_ms,
        "confusion": result.evaluation.matrix.counts.tolist(),
        **rep.to_dict(),
        "final_train_loss": result.trained.final_loss,
        "train_seconds": result.train_seconds,
        "eval_seconds": result.eval_seconds,
    }
