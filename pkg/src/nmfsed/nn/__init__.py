from .checkpoint import (ArchitectureMismatchError, CheckpointError, decode_checkpoint,
                         encode_checkpoint, load_checkpoint, save_checkpoint)
from .layers import bce_loss, sigmoid
from .model import (ARCHS, ModelParams, backward, build_model, clip_probabilities,
                    expected_shapes, forward, output_frames, parameter_count, standardize)

__all__ = [
    "ARCHS", "ArchitectureMismatchError", "CheckpointError", "ModelParams", "backward",
    "bce_loss", "build_model", "clip_probabilities", "decode_checkpoint", "encode_checkpoint",
    "expected_shapes", "forward", "load_checkpoint", "output_frames", "parameter_count",
    "save_checkpoint", "sigmoid", "standardize",
]
