"""Supervised training on (window, last-chunk label) pairs."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from ..errors import ConfigError, TrainingDiverged
from ..windowing import WindowConfig, num_chunks, window_bounds
from .checkpoint import ModelCheckpoint, checkpoint_from_model
from .model import EndpointModel, ModelConfig, label_targets, pad_window, sequence_loss

log = logging.getLogger(__name__)


class ChunkDataset:
    """Index of sliding windows over a set of per-utterance fbank matrices.

    Windows are sliced lazily so memory stays proportional to the audio,
    not to the number of overlapping windows.
    """

    def __init__(self, features: Sequence[np.ndarray], index: np.ndarray) -> None:
        self.features = list(features)
        self.index = np.asarray(index, dtype=np.int64).reshape(-1, 4)  # utt, lo, hi, label

    @classmethod
    def from_utterances(cls, features: Sequence[np.ndarray], chunk_labels: Sequence[Sequence[int]],
                        wcfg: WindowConfig) -> "ChunkDataset":
        rows = []
        for u, (feats, labels) in enumerate(zip(features, chunk_labels)):
            length = feats.shape[0]
            if len(labels) != num_chunks(length, wcfg):
                raise ConfigError(
                    f"utterance {u}: {len(labels)} labels for {num_chunks(length, wcfg)} chunks",
                    field="stride_ms",
                )
            for c, y in enumerate(labels, start=1):
                lo, hi = window_bounds(c, wcfg, length)
                rows.append((u, lo, hi, int(y)))
        return cls(features, np.array(rows, dtype=np.int64).reshape(-1, 4))

    @classmethod
    def from_windows(cls, windows: Sequence[np.ndarray], labels: Sequence[int]) -> "ChunkDataset":
        rows = [(i, 0, w.shape[0], int(y)) for i, (w, y) in enumerate(zip(windows, labels))]
        return cls(windows, np.array(rows, dtype=np.int64).reshape(-1, 4))

    def __len__(self) -> int:
        return int(self.index.shape[0])

    @property
    def labels(self) -> np.ndarray:
        return self.index[:, 3]

    def window(self, i: int) -> np.ndarray:
        u, lo, hi, _ = self.index[i]
        return self.features[u][lo:hi]

    def feature_stats(self) -> tuple[np.ndarray, np.ndarray]:
        frames = np.concatenate([f for f in self.features if f.shape[0]], axis=0).astype(np.float64)
        return frames.mean(axis=0), frames.std(axis=0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: float = 1.0
    batch_size: int = 64
    lr: float = 1e-3
    warmup_ratio: float = 0.03
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    seed: int = 0
    freeze_encoder: bool = False
    log_every: int = 100

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0", field="epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", field="batch_size")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError("warmup_ratio must lie in [0, 1)", field="warmup_ratio")


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    model: EndpointModel
    losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float | None:
        return self.checkpoint.config.get("final_train_loss")


def warmup_cosine(step: int, total: int, warmup_ratio: float) -> float:
    """Learning-rate multiplier: linear warmup then cosine decay to zero."""
    warmup = max(1, math.ceil(total * warmup_ratio)) if warmup_ratio > 0 else 0
    if step < warmup:
        return (step + 1) / warmup
    progress = (step - warmup) / max(1, total - warmup)
    return 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))


def init_model(model_cfg: ModelConfig, dataset: ChunkDataset, seed: int = 0) -> EndpointModel:
    torch.manual_seed(seed)
    model = EndpointModel(model_cfg)
    mean, std = dataset.feature_stats()
    model.set_normalizer(mean, std)
    return model


def _batch(model: EndpointModel, dataset: ChunkDataset, idx: np.ndarray):
    min_frames = model.cfg.frames_per_token
    windows = [pad_window(dataset.window(i), min_frames) for i in idx]
    labels = torch.as_tensor(dataset.labels[idx], dtype=torch.long)
    return windows, labels


def batch_loss(model: EndpointModel, dataset: ChunkDataset, idx: np.ndarray) -> torch.Tensor:
    windows, labels = _batch(model, dataset, idx)
    logits = model.teacher_forced_logits(windows, labels)
    return sequence_loss(logits, label_targets(labels))


@torch.no_grad()
def dataset_loss(model: EndpointModel, dataset: ChunkDataset, batch_size: int = 256) -> float:
    model.eval()
    total = 0.0
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        total += float(batch_loss(model, dataset, idx)) * len(idx)
    return total / max(1, len(dataset))


@torch.no_grad()
def batch_predictions(model: EndpointModel, dataset: ChunkDataset, batch_size: int = 256) -> np.ndarray:
    """Argmax first-token predictions (EOS excluded), batched for speed."""
    model.eval()
    preds = []
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        windows, labels = _batch(model, dataset, idx)
        first = model.teacher_forced_logits(windows, labels)[:, 0]
        preds.append((first[:, 1] > first[:, 0]).long().numpy())
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def train(dataset: ChunkDataset, model_cfg: ModelConfig, cfg: TrainConfig = TrainConfig(),
          window_cfg: WindowConfig | None = None) -> TrainResult:
    """Adam with warmup + cosine decay; deterministic for a fixed seed."""
    if len(dataset) == 0:
        raise ConfigError("training dataset is empty", field="dataset")
    model = init_model(model_cfg, dataset, cfg.seed)
    params = [
        p for name, p in model.named_parameters()
        if not (cfg.freeze_encoder and name.startswith("encoder."))
    ]
    steps_per_epoch = math.ceil(len(dataset) / cfg.batch_size)
    total = int(round(cfg.epochs * steps_per_epoch))
    opt = torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda s: warmup_cosine(s, total, cfg.warmup_ratio)
    )
    rng = np.random.default_rng(cfg.seed)
    snapshot = {
        "train": asdict(cfg),
        "window": asdict(window_cfg) if window_cfg else None,
        "train_examples": len(dataset),
    }
    last_good = checkpoint_from_model(model, **snapshot, steps=0)
    losses: list[float] = []
    order = np.zeros(0, dtype=np.int64)
    model.train()
    for step in range(total):
        if order.size < cfg.batch_size:
            order = np.concatenate([order, rng.permutation(len(dataset))])
        idx, order = order[: cfg.batch_size], order[cfg.batch_size :]
        loss = batch_loss(model, dataset, idx)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}", checkpoint=last_good)
        opt.zero_grad()
        loss.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        opt.step()
        sched.step()
        losses.append(float(loss.detach()))
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            recent = float(np.mean(losses[-cfg.log_every :]))
            log.info("step %d/%d loss %.4f lr %.2e", step + 1, total, recent, sched.get_last_lr()[0])
            last_good = checkpoint_from_model(model, **snapshot, steps=step + 1)
    model.eval()
    window = losses[-min(len(losses), steps_per_epoch):]
    final = float(np.mean(window)) if window else None
    ckpt = checkpoint_from_model(model, **snapshot, steps=total, final_train_loss=final)
    for p in model.parameters():
        p.requires_grad_(False)
    return TrainResult(ckpt, model, losses)
