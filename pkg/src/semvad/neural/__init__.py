from .checkpoint import (
    ModelCheckpoint,
    checkpoint_from_model,
    load_checkpoint,
    model_from_checkpoint,
    read_checkpoint,
    save_checkpoint,
    write_checkpoint,
)
from .model import (
    CONTINUE,
    EOS,
    STOP,
    AdapterParams,
    EndpointModel,
    LabelSequence,
    ModelConfig,
    StateDecision,
    adapter_forward,
    classify_chunk,
    downsample_concat,
    pad_window,
    sequence_loss,
)
from .train import ChunkDataset, TrainConfig, TrainResult, train

__all__ = [
    "CONTINUE", "EOS", "STOP", "AdapterParams", "ChunkDataset", "EndpointModel",
    "LabelSequence", "ModelCheckpoint", "ModelConfig", "StateDecision", "TrainConfig",
    "TrainResult", "adapter_forward", "checkpoint_from_model", "classify_chunk",
    "downsample_concat", "load_checkpoint", "model_from_checkpoint", "pad_window",
    "read_checkpoint", "save_checkpoint", "sequence_loss", "train", "write_checkpoint",
]
