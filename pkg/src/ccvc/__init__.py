"""Conditional-coding learned video codec with gain-vector variable
bitrate, GOP competition, and a deterministic entropy-coded bitstream."""

from .codec import build_gop_schedule, decode_sequence, encode_sequence
from .errors import (BitstreamError, CcvcError, CheckpointError, ShapeError)
from .evaluate import (RdPoint, emit_report, select_best_config, sweep_rates)
from .metrics import MsSsimConfig, ms_ssim, ms_ssim_db
from .nets import Model, NetworkConfig, load_checkpoint, save_checkpoint
from .tensor import Tensor
from .train import TrainConfig, train_loop
from .video import (ChromaFormat, Frame, FrameType, Sequence, read_yuv420,
                    write_yuv420)

__version__ = "0.1.0"

__all__ = [
    "BitstreamError", "CcvcError", "CheckpointError", "ChromaFormat",
    "Frame", "FrameType", "Model", "MsSsimConfig", "NetworkConfig",
    "RdPoint", "Sequence", "ShapeError", "Tensor", "TrainConfig",
    "build_gop_schedule", "decode_sequence", "emit_report",
    "encode_sequence", "load_checkpoint", "ms_ssim", "ms_ssim_db",
    "read_yuv420", "save_checkpoint", "select_best_config", "sweep_rates",
    "train_loop", "write_yuv420",
]
