from __future__ import annotations

"""averaging.py

直近 k 個のチェックポイントの要素ごとの算術平均 (埋め込み表・LN パラメータを含む全浮動小数テンソル)。
メタデータは最新のものを引き継ぐ。
"""

from pathlib import Path
from typing import Sequence

import torch

from ..errors import ConfigMismatchError
from ..model import Checkpoint, load_checkpoint
from .snapshot import SnapshotRing


def average_checkpoints(checkpoints: Sequence[Checkpoint]) -> Checkpoint:
    """並びの最後を最新とみなして平均する。k=1 なら最新をそのまま返す。"""
    if not checkpoints:
        raise ValueError("平均するチェックポイントがありません")
    newest = checkpoints[-1]
    for ckpt in checkpoints[:-1]:
        if ckpt.config != newest.config:
            raise ConfigMismatchError(f"step {ckpt.step} と step {newest.step} でモデル構成が異なります")
        if ckpt.precision != newest.precision or list(ckpt.state) != list(newest.state):
            raise ConfigMismatchError(f"step {ckpt.step} と step {newest.step} でテンソル構成が異なります")
    if len(checkpoints) == 1:
        return newest

    k = len(checkpoints)
    state: dict[str, torch.Tensor] = {}
    for name, ref in newest.state.items():
        total = torch.zeros(ref.shape, dtype=torch.float64)
        for ckpt in checkpoints:
            total += ckpt.state[name].to(torch.float64)
        state[name] = (total / k).to(ref.dtype)

    extra = dict(newest.extra)
    extra["averaged_steps"] = [c.step for c in checkpoints]
    return Checkpoint(
        config=newest.config,
        state=state,
        precision=newest.precision,
        seed=newest.seed,
        step=newest.step,
        extra=extra,
    )


def average(ring: SnapshotRing, k: int) -> Checkpoint:
    """リングの直近 k 個を平均する。"""
    if not 1 <= k <= len(ring):
        raise ValueError(f"k={k} はリング長 {len(ring)} の範囲 [1, {len(ring)}] 外です")
    paths = [Path(ring.directory) / e.path for e in ring.latest(k)]
    return average_checkpoints([load_checkpoint(p) for p in paths])
