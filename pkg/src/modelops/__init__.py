from __future__ import annotations

from .averaging import average, average_checkpoints  # noqa: F401
from .ensemble import (  # noqa: F401
    EnsembleResult,
    ModelPredictor,
    Predictor,
    collect_predictions,
    ensemble_eval,
    evaluate_matrix,
    prediction_dump_rows,
)
from .snapshot import SnapshotEntry, SnapshotRing, snapshot  # noqa: F401
from .voting import PredictionMatrix, majority_vote  # noqa: F401

__all__ = [
    "EnsembleResult",
    "ModelPredictor",
    "PredictionMatrix",
    "Predictor",
    "SnapshotEntry",
    "SnapshotRing",
    "average",
    "average_checkpoints",
    "collect_predictions",
    "ensemble_eval",
    "evaluate_matrix",
    "majority_vote",
    "prediction_dump_rows",
    "snapshot",
]
