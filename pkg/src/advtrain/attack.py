from __future__ import annotations

"""attack.py

評価時の埋め込み攻撃。凍結モデルに対し R_CE を目的に内側最大化を行い、
clean と攻撃後の正解率を返す。attacked_accuracy は「clean でも攻撃後でも正解」の割合、
raw_attacked_accuracy は攻撃後の予測だけで数えた割合。
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import torch

from ..model import FusionInput, TCFModel, collate
from .config import AdvConfig
from .inner_max import inner_maximize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttackResult:
    clean_accuracy: float
    attacked_accuracy: float
    num_examples: int
    raw_attacked_accuracy: float = 0.0


def attack_eval(
    model: TCFModel,
    inputs: Sequence[FusionInput],
    labels: Sequence[int],
    cfg: AdvConfig,
    generator: torch.Generator | None = None,
    *,
    batch_size: int = 128,
) -> AttackResult:
    if len(inputs) != len(labels):
        raise ValueError(f"入力数 {len(inputs)} とラベル数 {len(labels)} が一致しません")
    if not inputs:
        return AttackResult(0.0, 0.0, 0)

    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    clean_hits = 0
    robust_hits = 0
    raw_hits = 0
    try:
        for lo in range(0, len(inputs), batch_size):
            hi = min(lo + batch_size, len(inputs))
            batch = collate(inputs[lo:hi], model.config, dtype=dtype)
            y = torch.tensor(list(labels[lo:hi]), dtype=torch.long)
            with torch.no_grad():
                clean_ok = model(batch).argmax(dim=-1) == y
            pert = inner_maximize(model, batch, y, cfg, generator, alpha=0.0)
            with torch.no_grad():
                adv_ok = model(batch, pert.delta).argmax(dim=-1) == y
            clean_hits += int(clean_ok.sum())
            robust_hits += int((clean_ok & adv_ok).sum())
            raw_hits += int(adv_ok.sum())
    finally:
        model.train(was_training)

    n = len(inputs)
    result = AttackResult(clean_hits / n, robust_hits / n, n, raw_hits / n)
    logger.info("attack_eval: clean=%.4f attacked=%.4f (n=%d, ε=%g)", result.clean_accuracy, result.attacked_accuracy, n, cfg.epsilon)
    return result
