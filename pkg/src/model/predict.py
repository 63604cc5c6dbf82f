from __future__ import annotations

"""predict.py

読み取り専用の推論。固定長チャンクに分割して (必要ならスレッドで) 評価し、
チャンク順に結果を組み立てるので、スレッド数によらず同じ値になる。
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np
import torch

from .inputs import FusionInput, collate
from .tcf import TCFModel


def _chunks(n: int, size: int) -> list[tuple[int, int]]:
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def predict_proba(
    model: TCFModel,
    inputs: Sequence[FusionInput],
    *,
    batch_size: int = 256,
    threads: int = 1,
) -> np.ndarray:
    """(N, answer_count) の予測分布 (float64) を返す。"""
    if not inputs:
        return np.zeros((0, model.config.answer_count))
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()

    def _run(bounds: tuple[int, int]) -> np.ndarray:
        lo, hi = bounds
        batch = collate(inputs[lo:hi], model.config, dtype=dtype)
        with torch.no_grad():
            return torch.softmax(model(batch), dim=-1).to(torch.float64).numpy()

    bounds = _chunks(len(inputs), batch_size)
    try:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(_run, bounds))
        else:
            parts = [_run(b) for b in bounds]
    finally:
        model.train(was_training)
    return np.concatenate(parts, axis=0)


def accuracy(predicted: np.ndarray, labels: Sequence[int]) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(np.asarray(predicted) == labels))
