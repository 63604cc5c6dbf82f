from __future__ import annotations

from .checkpoint import Checkpoint, load_checkpoint, load_model, save_checkpoint, write_checkpoint  # noqa: F401
from .config import ModelConfig, tiny_config  # noqa: F401
from .inputs import FusionBatch, FusionInput, RegionFeature, SpanMap, collate  # noqa: F401
from .predict import accuracy, predict_proba  # noqa: F401
from .tcf import (  # noqa: F401
    EncoderOutput,
    TCFModel,
    assemble_sequence,
    classify,
    encode,
    forward,
    project_region,
)

__all__ = [
    "Checkpoint",
    "EncoderOutput",
    "FusionBatch",
    "FusionInput",
    "ModelConfig",
    "RegionFeature",
    "SpanMap",
    "TCFModel",
    "accuracy",
    "assemble_sequence",
    "classify",
    "collate",
    "encode",
    "forward",
    "load_checkpoint",
    "load_model",
    "predict_proba",
    "project_region",
    "save_checkpoint",
    "tiny_config",
    "write_checkpoint",
]
