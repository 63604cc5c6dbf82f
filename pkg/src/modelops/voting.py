from __future__ import annotations

"""voting.py

複数モデルの予測の多数決。同票は (1) 同票クラスに対する全モデルの確率和が最大のもの、
(2) それでも同じならクラス番号の小さいもの、の順に決める。完全に決定的。
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from ..errors import ShapeMismatchError, TieBreakError


@dataclass
class PredictionMatrix:
    """M モデル × N 例の予測クラスと、任意で M × N × C の確率。"""

    votes: np.ndarray
    probabilities: Optional[np.ndarray] = None
    answer_count: Optional[int] = None
    model_ids: Optional[list[str]] = None

    def __post_init__(self) -> None:
        self.votes = np.asarray(self.votes, dtype=np.int64)
        if self.votes.ndim != 2 or self.votes.shape[0] < 1:
            raise ShapeMismatchError(f"votes は (M≥1, N) が必要です: {self.votes.shape}")
        if self.probabilities is not None:
            self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
            if self.probabilities.shape[:2] != self.votes.shape:
                raise ShapeMismatchError(
                    f"probabilities {self.probabilities.shape} と votes {self.votes.shape} が対応しません"
                )
            if self.answer_count is None:
                self.answer_count = int(self.probabilities.shape[2])
        if self.answer_count is None:
            self.answer_count = int(self.votes.max()) + 1 if self.votes.size else 1
        if self.votes.size and (self.votes.min() < 0 or self.votes.max() >= self.answer_count):
            raise ShapeMismatchError(f"予測クラスが解答語彙 [0, {self.answer_count}) の外にあります")

    @property
    def num_models(self) -> int:
        return int(self.votes.shape[0])

    @property
    def num_examples(self) -> int:
        return int(self.votes.shape[1])

    @classmethod
    def from_probabilities(cls, probabilities: np.ndarray, model_ids: Optional[list[str]] = None) -> "PredictionMatrix":
        probs = np.asarray(probabilities, dtype=np.float64)
        return cls(votes=probs.argmax(axis=-1), probabilities=probs, model_ids=model_ids)

    @classmethod
    def from_dump(cls, frame: pd.DataFrame) -> "PredictionMatrix":
        """予測ダンプ (model_id, example_index, predicted, p_0..p_{C-1}) から組み立てる。"""
        prob_cols = sorted((c for c in frame.columns if c.startswith("p_")), key=lambda c: int(c[2:]))
        model_ids = list(dict.fromkeys(frame["model_id"].astype(str)))
        votes, probs = [], []
        for mid in model_ids:
            part = frame[frame["model_id"].astype(str) == mid].sort_values("example_index")
            votes.append(part["predicted"].to_numpy(dtype=np.int64))
            if prob_cols:
                probs.append(part[prob_cols].to_numpy(dtype=np.float64))
        lengths = {len(v) for v in votes}
        if len(lengths) != 1:
            raise ShapeMismatchError(f"モデルごとの例数が揃っていません: {sorted(lengths)}")
        return cls(
            votes=np.stack(votes),
            probabilities=np.stack(probs) if prob_cols else None,
            answer_count=len(prob_cols) or None,
            model_ids=model_ids,
        )


def majority_vote(preds: PredictionMatrix) -> np.ndarray:
    """例ごとの多数決クラス (N,) を返す。"""
    m, n = preds.votes.shape
    c = int(preds.answer_count or 1)
    counts = np.zeros((n, c), dtype=np.int64)
    np.add.at(counts, (np.tile(np.arange(n), m), preds.votes.reshape(-1)), 1)

    best = counts.max(axis=1, keepdims=True)
    tied = counts == best
    winners = counts.argmax(axis=1)
    needs_break = tied.sum(axis=1) > 1
    if not needs_break.any():
        return winners

    if preds.probabilities is None:
        first = int(np.flatnonzero(needs_break)[0])
        raise TieBreakError(f"例 {first} で同票が発生しましたが確率が与えられていません")
    summed = preds.probabilities.sum(axis=0)
    score = np.where(tied, summed, -np.inf)
    top = score.max(axis=1, keepdims=True)
    candidates = tied & (score == top)
    # argmax は最初の True (= 最小クラス番号) を返す
    winners[needs_break] = candidates[needs_break].argmax(axis=1)
    return winners
