from __future__ import annotations

"""ensemble.py

複数モデルの推論 → 多数決 → アンサンブル精度と個別精度。
予測ダンプ (CSV) を介して別々に学習した実行同士もオフラインで組み合わせられる。
"""

from dataclasses import dataclass, field
from typing import Dict, List, Protocol, Sequence

import numpy as np

from ..errors import ConfigMismatchError
from ..model import FusionInput, TCFModel, accuracy, predict_proba
from .voting import PredictionMatrix, majority_vote


class Predictor(Protocol):
    model_id: str
    answer_count: int

    def predict_proba(self, inputs: Sequence[FusionInput]) -> np.ndarray: ...


@dataclass
class ModelPredictor:
    """TCFModel を Predictor として包む。"""

    model: TCFModel
    model_id: str
    batch_size: int = 256
    threads: int = 1

    @property
    def answer_count(self) -> int:
        return self.model.config.answer_count

    def predict_proba(self, inputs: Sequence[FusionInput]) -> np.ndarray:
        return predict_proba(self.model, inputs, batch_size=self.batch_size, threads=self.threads)


@dataclass
class EnsembleResult:
    accuracy: float
    per_model: Dict[str, float]
    predictions: np.ndarray = field(repr=False)


def collect_predictions(predictors: Sequence[Predictor], inputs: Sequence[FusionInput]) -> PredictionMatrix:
    if not predictors:
        raise ValueError("モデルが 1 つ以上必要です")
    counts = {p.answer_count for p in predictors}
    if len(counts) != 1:
        raise ConfigMismatchError(f"モデル間で解答語彙のサイズが異なります: {sorted(counts)}")
    probs = np.stack([np.asarray(p.predict_proba(inputs), dtype=np.float64) for p in predictors])
    return PredictionMatrix.from_probabilities(probs, model_ids=[p.model_id for p in predictors])


def evaluate_matrix(preds: PredictionMatrix, labels: Sequence[int]) -> EnsembleResult:
    ids = preds.model_ids or [f"model-{i}" for i in range(preds.num_models)]
    per_model = {mid: accuracy(preds.votes[i], labels) for i, mid in enumerate(ids)}
    voted = majority_vote(preds)
    return EnsembleResult(accuracy=accuracy(voted, labels), per_model=per_model, predictions=voted)


def ensemble_eval(
    predictors: Sequence[Predictor],
    inputs: Sequence[FusionInput],
    labels: Sequence[int],
) -> EnsembleResult:
    """各モデルで推論し、多数決のアンサンブル精度と個別精度を返す。"""
    return evaluate_matrix(collect_predictions(predictors, inputs), labels)


def prediction_dump_rows(model_id: str, probabilities: np.ndarray, labels: Sequence[int]) -> List[dict]:
    """予測ダンプの行 (例ごとに model_id, 予測クラス, 正解, 確率行)。"""
    probs = np.asarray(probabilities, dtype=np.float64)
    rows = []
    for i, (row, y) in enumerate(zip(probs, labels)):
        rec = {"example_index": i, "model_id": model_id, "predicted": int(row.argmax()), "label": int(y)}
        rec.update({f"p_{c}": float(v) for c, v in enumerate(row)})
        rows.append(rec)
    return rows
