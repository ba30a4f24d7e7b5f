"""Per-chunk evaluation: confusion matrix, precision/recall/F1/accuracy, latency."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .features import FbankSequence
from .neural.model import STOP, EndpointModel, classify_chunk
from .windowing import ChunkView, WindowConfig, chunk_stream, num_chunks

# rows are ground truth, columns are estimates, Stop first
CLASSES = ("stop", "continue")
CLASS_TITLES = {"stop": "Stop Speaking", "continue": "Continue Speaking"}


def _index(y: int) -> int:
    return 0 if y == STOP else 1


@dataclass
class ConfusionMatrix:
    """``counts[ground_truth][estimate]`` over (Stop, Continue)."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((2, 2), dtype=np.int64))

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(2, 2)
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_pairs(cls, truth: Iterable[int], estimate: Iterable[int]) -> "ConfusionMatrix":
        cm = cls()
        for t, e in zip(truth, estimate):
            cm.add(t, e)
        return cm

    def add(self, truth: int, estimate: int) -> None:
        self.counts[_index(truth), _index(estimate)] += 1

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def precision(self, cls: str) -> float:
        i = CLASSES.index(cls)
        tp, predicted = self.counts[i, i], self.counts[:, i].sum()
        if predicted == 0:
            # nothing predicted: perfect iff nothing was missed
            return 1.0 if self.counts[i].sum() == 0 else 0.0
        return float(tp / predicted)

    def recall(self, cls: str) -> float:
        i = CLASSES.index(cls)
        tp, actual = self.counts[i, i], self.counts[i].sum()
        if actual == 0:
            return 1.0 if self.counts[:, i].sum() == 0 else 0.0
        return float(tp / actual)

    def f1(self, cls: str) -> float:
        p, r = self.precision(cls), self.recall(cls)
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 1.0


@dataclass
class LatencyStats:
    mean_ms: float
    p50_ms: float
    p95_ms: float
    n: int

    @classmethod
    def from_samples(cls, seconds: Sequence[float]) -> "LatencyStats":
        ms = np.asarray(seconds, dtype=np.float64) * 1000.0
        if ms.size == 0:
            return cls(float("nan"), float("nan"), float("nan"), 0)
        return cls(float(ms.mean()), float(np.percentile(ms, 50)), float(np.percentile(ms, 95)), int(ms.size))


@dataclass
class MetricsReport:
    precision: dict[str, float]
    recall: dict[str, float]
    f1: dict[str, float]
    accuracy: float
    latency: LatencyStats | None = None

    @classmethod
    def from_matrix(cls, cm: ConfusionMatrix, latency: LatencyStats | None = None) -> "MetricsReport":
        return cls(
            {c: cm.precision(c) for c in CLASSES},
            {c: cm.recall(c) for c in CLASSES},
            {c: cm.f1(c) for c in CLASSES},
            cm.accuracy,
            latency,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def report_json(cm: ConfusionMatrix, report: MetricsReport, **extra) -> str:
    data = {"confusion": cm.counts.tolist(), "classes": list(CLASSES), **report.to_dict(), **extra}
    return json.dumps(data, indent=2, sort_keys=True)


def report_table(cm: ConfusionMatrix, report: MetricsReport) -> str:
    """Aligned text table laid out like the usual GT-by-estimate confusion table."""
    stop, cont = CLASS_TITLES["stop"], CLASS_TITLES["continue"]
    rows = [
        ["GT\\Est", stop, cont, "Recall"],
        [stop, str(cm.counts[0, 0]), str(cm.counts[0, 1]), f"{report.recall['stop']:.3f}"],
        [cont, str(cm.counts[1, 0]), str(cm.counts[1, 1]), f"{report.recall['continue']:.3f}"],
        ["Precision", f"{report.precision['stop']:.3f}", f"{report.precision['continue']:.3f}", "Accuracy:"],
        ["F1 Score", f"{report.f1['stop']:.3f}", f"{report.f1['continue']:.3f}", f"{report.accuracy:.3f}"],
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for n, r in enumerate(rows):
        lines.append(" | ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths))))
        if n in (0, 2):
            lines.append("-+-".join("-" * w for w in widths))
    if report.latency is not None and report.latency.n:
        lat = report.latency
        lines.append(f"latency per chunk: mean {lat.mean_ms:.2f} ms, p50 {lat.p50_ms:.2f} ms, "
                     f"p95 {lat.p95_ms:.2f} ms (n={lat.n})")
    return "\n".join(lines)


@dataclass
class EvalItem:
    """One utterance's features and its per-chunk labels at ``stride_ms``."""

    features: FbankSequence | np.ndarray
    labels: Sequence[int]
    stride_ms: int
    utt_id: str = ""


@dataclass
class EvalResult:
    matrix: ConfusionMatrix
    report: MetricsReport
    predictions: dict[str, list[int]] = field(default_factory=dict)


def evaluate(model: EndpointModel, dataset: Iterable[EvalItem], cfg: WindowConfig) -> EvalResult:
    """Classify every chunk of every utterance; time only the classifier call."""
    cm = ConfusionMatrix()
    timings: list[float] = []
    predictions: dict[str, list[int]] = {}
    for n, item in enumerate(dataset):
        if item.stride_ms != cfg.stride_ms:
            raise ConfigError(
                f"labels for {item.utt_id or n} use stride {item.stride_ms} ms, "
                f"config uses {cfg.stride_ms} ms", field="stride_ms")
        frames = item.features.frames if isinstance(item.features, FbankSequence) else item.features
        if len(item.labels) != num_chunks(frames.shape[0], cfg):
            raise ConfigError(f"label count mismatch for {item.utt_id or n}", field="chunk_labels")
        preds = []
        for chunk, truth in zip(chunk_stream(frames, cfg), item.labels):
            t0 = time.perf_counter()
            decision = classify_chunk(model, chunk.frames)
            timings.append(time.perf_counter() - t0)
            cm.add(int(truth), decision.y)
            preds.append(decision.y)
        predictions[item.utt_id or str(n)] = preds
    return EvalResult(cm, MetricsReport.from_matrix(cm, LatencyStats.from_samples(timings)), predictions)


def measure_latency(model: EndpointModel, chunks: Sequence[ChunkView | np.ndarray],
                    n_warmup: int = 5, n_iters: int = 100) -> tuple[LatencyStats, list[int]]:
    """Wall-clock per-chunk decision time, cycling through ``chunks``.

    Returns the stats and the decision for each timed call.
    """
    if n_iters < 30:
        raise ValueError("n_iters must be >= 30 for a meaningful p95")
    if not chunks:
        raise ValueError("no chunks to time")
    frames = [c.frames if isinstance(c, ChunkView) else c for c in chunks]
    for i in range(n_warmup):
        classify_chunk(model, frames[i % len(frames)])
    timings, decisions = [], []
    for i in range(n_iters):
        f = frames[i % len(frames)]
        t0 = time.perf_counter()
        d = classify_chunk(model, f)
        timings.append(time.perf_counter() - t0)
        decisions.append(d.y)
    return LatencyStats.from_samples(timings), decisions
