"""Encoder, concat-k adapter and causal classifier.

Audio path: fbank window -> strided causal conv encoder (100 Hz -> 25 Hz)
-> concatenation of every ``k`` encoder rows -> two-layer ReLU adapter ->
causal transformer over ``[audio tokens ; prompt vectors]`` -> output head
over ``{0: Continue, 1: Stop, 2: EOS}``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ConfigError, DegenerateInputError, NumericError

CONTINUE, STOP, EOS = 0, 1, 2
VOCAB_SIZE = 3
ENCODER_STRIDE = 4


@dataclass(frozen=True)
class ModelConfig:
    n_mels: int = 80
    d_enc: int = 64
    k: int = 4
    d_hidden: int = 256
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    n_prompt: int = 4
    max_audio_tokens: int = 16

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be >= 1", field="k")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads", field="n_heads")
        if self.n_prompt < 1:
            raise ConfigError("n_prompt must be >= 1", field="n_prompt")
        if self.max_audio_tokens < 1:
            raise ConfigError("max_audio_tokens must be >= 1", field="max_audio_tokens")

    @property
    def frames_per_token(self) -> int:
        return ENCODER_STRIDE * self.k

    @classmethod
    def for_window(cls, window_frames: int, **kw) -> "ModelConfig":
        k = kw.get("k", cls.k)
        return cls(max_audio_tokens=max(1, window_frames // (ENCODER_STRIDE * k)), **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LabelSequence:
    """Two-token target ``(y, EOS)``."""

    y: int

    def __post_init__(self) -> None:
        if self.y not in (CONTINUE, STOP):
            raise ValueError(f"label must be 0 or 1, got {self.y}")

    @property
    def tokens(self) -> tuple[int, int]:
        return (self.y, EOS)


@dataclass(frozen=True)
class StateDecision:
    y: int
    logits: np.ndarray  # [2, 3]
    confidence: float

    @property
    def probabilities(self) -> np.ndarray:
        z = self.logits.astype(np.float64)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    @property
    def is_stop(self) -> bool:
        return self.y == STOP


@dataclass(frozen=True)
class AdapterParams:
    w1: torch.Tensor  # [d_hidden, k * d_enc]
    b1: torch.Tensor
    w2: torch.Tensor  # [d_model, d_hidden]
    b2: torch.Tensor
    k: int


def downsample_concat(a: torch.Tensor, k: int) -> torch.Tensor:
    """Concatenate every ``k`` consecutive rows; trailing ``N mod k`` rows are dropped.

    Works on ``[N, d]`` or batched ``[B, N, d]`` input.
    """
    if k < 1:
        raise ConfigError("k must be >= 1", field="k")
    n, d = a.shape[-2], a.shape[-1]
    groups = n // k
    a = a[..., : groups * k, :]
    return a.reshape(*a.shape[:-2], groups, k * d)


def adapter_forward(a_i: torch.Tensor, p: AdapterParams) -> torch.Tensor:
    if a_i.shape[-1] != p.w1.shape[1]:
        raise ConfigError(
            f"adapter expects {p.w1.shape[1]} input columns, got {a_i.shape[-1]}",
            field="k",
        )
    if p.w2.shape[1] != p.w1.shape[0]:
        raise ConfigError("adapter W2 and W1 hidden sizes differ", field="d_hidden")
    hidden = torch.relu(a_i @ p.w1.T + p.b1)
    return hidden @ p.w2.T + p.b2


class CausalConvEncoder(nn.Module):
    """Two stride-2 causal convolutions: output row ``i`` sees input frames ``< 4(i+1)``."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.register_buffer("norm_mean", torch.zeros(cfg.n_mels))
        self.register_buffer("norm_scale", torch.ones(cfg.n_mels))
        self.conv1 = nn.Conv1d(cfg.n_mels, cfg.d_enc, kernel_size=3, stride=2)
        self.conv2 = nn.Conv1d(cfg.d_enc, cfg.d_enc, kernel_size=3, stride=2)

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.norm_mean) * self.norm_scale

    def forward(self, x: torch.Tensor, frame_mask: torch.Tensor | None = None) -> torch.Tensor:
        # x: [B, T, n_mels], already normalized; T divisible by 4
        h = F.gelu(self.conv1(F.pad(x.transpose(1, 2), (2, 0))))
        if frame_mask is not None:
            h = h * frame_mask[:, None, ::2].to(h.dtype)
        h = F.gelu(self.conv2(F.pad(h, (2, 0))))
        return h.transpose(1, 2)[:, : x.shape[1] // ENCODER_STRIDE]


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.n_heads = cfg.n_heads
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor | None) -> torch.Tensor:
        b, t, d = x.shape
        hd = d // self.n_heads
        q, k, v = self.qkv(x).split(d, dim=-1)
        q, k, v = (z.view(b, t, self.n_heads, hd).transpose(1, 2) for z in (q, k, v))
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(hd)
        allowed = torch.ones(t, t, dtype=torch.bool, device=x.device).tril()
        if key_mask is not None:
            allowed = allowed & key_mask[:, None, None, :]
        scores = scores.masked_fill(~allowed, torch.finfo(scores.dtype).min)
        out = torch.softmax(scores, dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(b, t, d))


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = CausalSelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ff = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.d_ff), nn.GELU(), nn.Linear(cfg.d_ff, cfg.d_model)
        )

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor | None) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), key_mask)
        return x + self.ff(self.ln2(x))


class EndpointModel(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()) -> None:
        super().__init__()
        self.cfg = cfg
        self.encoder = CausalConvEncoder(cfg)
        self.adapter_in = nn.Linear(cfg.k * cfg.d_enc, cfg.d_hidden)
        self.adapter_out = nn.Linear(cfg.d_hidden, cfg.d_model)
        self.prompt = nn.Parameter(torch.randn(cfg.n_prompt, cfg.d_model) * 0.02)
        self.token_embedding = nn.Embedding(VOCAB_SIZE, cfg.d_model)
        # position 0 = decoded token, 1 = last prompt vector, counting backwards
        self.position = nn.Embedding(cfg.max_audio_tokens + cfg.n_prompt + 1, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, VOCAB_SIZE)

    @property
    def adapter(self) -> AdapterParams:
        return AdapterParams(
            self.adapter_in.weight, self.adapter_in.bias,
            self.adapter_out.weight, self.adapter_out.bias, self.cfg.k,
        )

    def set_normalizer(self, mean: np.ndarray, std: np.ndarray) -> None:
        with torch.no_grad():
            self.encoder.norm_mean.copy_(torch.as_tensor(mean, dtype=self.encoder.norm_mean.dtype))
            scale = 1.0 / np.maximum(np.asarray(std, dtype=np.float64), 1e-3)
            self.encoder.norm_scale.copy_(torch.as_tensor(scale, dtype=self.encoder.norm_scale.dtype))

    # ---- single-window path -------------------------------------------------

    def tokens_for(self, n_frames: int) -> int:
        return (n_frames // ENCODER_STRIDE) // self.cfg.k

    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        """``[T, n_mels]`` fbank window -> ``[T // 4, d_enc]`` encoder rows at 25 Hz."""
        if frames.shape[0] < ENCODER_STRIDE:
            raise DegenerateInputError(
                f"window has {frames.shape[0]} frames; at least {ENCODER_STRIDE} required"
            )
        t = frames.shape[0] - frames.shape[0] % ENCODER_STRIDE
        x = self.encoder.normalize(frames[:t])[None]
        return self.encoder(x)[0]

    def adapt(self, a: torch.Tensor) -> torch.Tensor:
        return adapter_forward(downsample_concat(a, self.cfg.k), self.adapter)

    def _backbone(self, audio: torch.Tensor, extra: torch.Tensor | None,
                  key_mask: torch.Tensor | None) -> torch.Tensor:
        # audio: [B, G, d]; extra: [B, E, d] decoded-token embeddings
        b, g, _ = audio.shape
        parts = [audio, self.prompt.expand(b, -1, -1)]
        n_ctx = g + self.cfg.n_prompt
        if g > self.cfg.max_audio_tokens:
            raise ConfigError(
                f"{g} audio tokens exceed the model's {self.cfg.max_audio_tokens}",
                field="max_audio_tokens",
            )
        pos = torch.arange(n_ctx, 0, -1, device=audio.device)
        if extra is not None:
            parts.append(extra)
            pos = torch.cat([pos, torch.zeros(extra.shape[1], dtype=pos.dtype)])
            if key_mask is not None:
                key_mask = torch.cat(
                    [key_mask, torch.ones(b, extra.shape[1] + self.cfg.n_prompt, dtype=torch.bool)], 1
                )
        elif key_mask is not None:
            key_mask = torch.cat([key_mask, torch.ones(b, self.cfg.n_prompt, dtype=torch.bool)], 1)
        x = torch.cat(parts, dim=1) + self.position(pos)
        for block in self.blocks:
            x = block(x, key_mask)
        return self.head(self.ln_f(x))

    def decode(self, a_p: torch.Tensor) -> StateDecision:
        """Greedy two-token decoding from adapted features ``[N', d_model]``."""
        if a_p.shape[0] == 0:
            raise DegenerateInputError("no adapted audio rows to classify")
        audio = a_p[None]
        first = self._backbone(audio, None, None)[0, -1]
        # EOS is not a legal first token; ties resolve to Continue
        y = STOP if first[STOP] > first[CONTINUE] else CONTINUE
        emb = self.token_embedding(torch.tensor([[y]]))
        second = self._backbone(audio, emb, None)[0, -1]
        logits = torch.stack([first, second])
        if not torch.isfinite(logits).all():
            raise NumericError("non-finite logits", parameter=self.first_nonfinite_parameter())
        pair = first[[CONTINUE, STOP]].double()
        confidence = float(torch.softmax(pair, dim=0)[y])
        return StateDecision(y=y, logits=logits.detach().float().numpy(), confidence=confidence)

    def first_nonfinite_parameter(self) -> str:
        for name, tensor in list(self.named_parameters()) + list(self.named_buffers()):
            if not torch.isfinite(tensor).all():
                return name
        return "<activations>"

    # ---- batched teacher-forced path ---------------------------------------

    def teacher_forced_logits(self, windows: Sequence[np.ndarray], labels: torch.Tensor) -> torch.Tensor:
        """Logits ``[B, 2, 3]`` for targets ``(y, EOS)`` under teacher forcing.

        Windows of different lengths are left-padded at token granularity;
        padded encoder inputs are zeroed so each row matches the unbatched path.
        """
        audio, key_mask = self.batch_audio(windows)
        emb = self.token_embedding(labels.view(-1, 1))
        logits = self._backbone(audio, emb, key_mask)
        return logits[:, -2:]

    def batch_audio(self, windows: Sequence[np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
        fpt = self.cfg.frames_per_token
        n_tok = [self.tokens_for(w.shape[0]) for w in windows]
        if min(n_tok) < 1:
            raise DegenerateInputError(f"window shorter than {fpt} frames")
        g = max(n_tok)
        dtype = self.encoder.norm_mean.dtype
        x = torch.zeros(len(windows), g * fpt, self.cfg.n_mels, dtype=dtype)
        frame_mask = torch.zeros(len(windows), g * fpt, dtype=torch.bool)
        for i, (w, n) in enumerate(zip(windows, n_tok)):
            used = torch.as_tensor(w[: n * fpt], dtype=dtype)
            x[i, (g - n) * fpt:] = self.encoder.normalize(used)
            frame_mask[i, (g - n) * fpt:] = True
        a = self.encoder(x, frame_mask)
        a_p = adapter_forward(downsample_concat(a, self.cfg.k), self.adapter)
        key_mask = frame_mask[:, ::fpt]
        return a_p, key_mask


def sequence_loss(logits: torch.Tensor, targets: torch.Tensor | LabelSequence) -> torch.Tensor:
    """Summed next-token cross entropy over the two target positions.

    ``logits`` is ``[2, 3]`` (one sequence) or ``[B, 2, 3]``; the batched form
    returns the mean over sequences of the per-sequence sum.
    """
    if isinstance(targets, LabelSequence):
        targets = torch.tensor(targets.tokens)
    if logits.dim() == 2:
        return F.cross_entropy(logits, targets, reduction="sum")
    b = logits.shape[0]
    return F.cross_entropy(logits.reshape(-1, VOCAB_SIZE), targets.reshape(-1), reduction="sum") / b


def label_targets(y: torch.Tensor) -> torch.Tensor:
    return torch.stack([y, torch.full_like(y, EOS)], dim=1)


def pad_window(frames: np.ndarray, min_frames: int) -> np.ndarray:
    """Repeat the final frame until the window has ``min_frames`` rows."""
    n = frames.shape[0]
    if n >= min_frames:
        return frames
    if n == 0:
        raise DegenerateInputError("cannot pad an empty window")
    return np.concatenate([frames, np.repeat(frames[-1:], min_frames - n, axis=0)])


@torch.no_grad()
def classify_chunk(model: EndpointModel, frames: np.ndarray) -> StateDecision:
    """Decide Continue/Stop for one fbank window (``[T, n_mels]``)."""
    frames = pad_window(np.asarray(frames), model.cfg.frames_per_token)
    x = torch.as_tensor(frames, dtype=model.encoder.norm_mean.dtype)
    return model.decode(model.adapt(model.encode(x)))
