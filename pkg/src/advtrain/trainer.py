from __future__ import annotations

"""trainer.py

外側最小化。adversarial モードでは θ を凍結して δ_K を求め、その δ_K で
L_con + R_CE + α·R_JSD の勾配による Adam 1 ステップを取る (交互最適化)。
vanilla モードは L_con のみで学習する。
"""

import logging
import time
from typing import Callable, Literal, Sequence

import numpy as np
import torch

from ..errors import NonFiniteError, NonFiniteLossError
from ..model import FusionInput, TCFModel, collate
from ..tools.metrics_log import MetricsLog
from .config import AdvConfig
from .inner_max import inner_maximize
from .losses import LossBreakdown, losses, vanilla_loss

logger = logging.getLogger(__name__)

TrainingMode = Literal["vanilla", "adversarial"]


def make_optimizer(
    model: TCFModel,
    learning_rate: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=learning_rate, betas=betas, eps=eps)


def train_step(
    model: TCFModel,
    optimizer: torch.optim.Optimizer,
    batch,
    labels: torch.Tensor,
    *,
    mode: TrainingMode,
    cfg: AdvConfig,
    step: int,
    generator: torch.Generator | None = None,
) -> LossBreakdown:
    """1 ステップ分の更新を行い、更新前の損失内訳を返す。θ はその場で更新される。"""
    if batch.size == 0:
        raise ValueError("空のバッチでは学習できません")
    labels = torch.as_tensor(labels, dtype=torch.long)
    if mode not in ("vanilla", "adversarial"):
        raise ValueError(f"未知の学習モード: {mode!r}")
    model.train()
    try:
        if mode == "vanilla":
            breakdown = vanilla_loss(model, batch, labels)
        else:
            pert = inner_maximize(model, batch, labels, cfg, generator)
            breakdown = losses(model, batch, labels, pert.delta, cfg)
    except NonFiniteError as e:
        raise NonFiniteLossError(step, str(e)) from e

    if not bool(torch.isfinite(breakdown.combined)):
        raise NonFiniteLossError(step, f"{breakdown.to_record()}")

    optimizer.zero_grad(set_to_none=True)
    breakdown.combined.backward()
    optimizer.step()
    return breakdown


class Trainer:
    """エポック単位の学習ループ。各ステップを MetricsLog に 1 行ずつ記録する。"""

    def __init__(
        self,
        model: TCFModel,
        *,
        mode: TrainingMode,
        adv_cfg: AdvConfig,
        optimizer: torch.optim.Optimizer,
        batch_size: int,
        shuffle_rng: np.random.Generator,
        delta_generator: torch.Generator | None = None,
        metrics_log: MetricsLog | None = None,
        record_wall_clock: bool = False,
        start_step: int = 0,
    ):
        self.model = model
        self.mode = mode
        self.adv_cfg = adv_cfg
        self.optimizer = optimizer
        self.batch_size = batch_size
        self.shuffle_rng = shuffle_rng
        self.delta_generator = delta_generator
        self.metrics_log = metrics_log
        self.record_wall_clock = record_wall_clock
        self.step = start_step
        self._dtype = next(model.parameters()).dtype

    def run_epoch(self, inputs: Sequence[FusionInput], labels: Sequence[int], epoch: int) -> float:
        """1 エポック学習し、combined 損失の平均を返す。"""
        order = self.shuffle_rng.permutation(len(inputs))
        totals: list[float] = []
        for lo in range(0, len(order), self.batch_size):
            idx = order[lo : lo + self.batch_size]
            batch = collate([inputs[i] for i in idx], self.model.config, dtype=self._dtype)
            y = torch.tensor([labels[i] for i in idx], dtype=torch.long)
            started = time.perf_counter()
            breakdown = train_step(
                self.model,
                self.optimizer,
                batch,
                y,
                mode=self.mode,
                cfg=self.adv_cfg,
                step=self.step,
                generator=self.delta_generator,
            )
            record = breakdown.to_record()
            totals.append(record["combined"])
            if self.metrics_log is not None:
                self.metrics_log.append(
                    {
                        "step": self.step,
                        "epoch": epoch,
                        "mode": self.mode,
                        **record,
                        "wall_clock": round(time.perf_counter() - started, 6) if self.record_wall_clock else None,
                    }
                )
            self.step += 1
        return float(np.mean(totals)) if totals else float("nan")

    def fit(
        self,
        inputs: Sequence[FusionInput],
        labels: Sequence[int],
        epochs: int,
        on_epoch_end: Callable[[int, int, float], None] | None = None,
    ) -> list[float]:
        """epochs 回学習する。on_epoch_end(epoch, step, mean_loss) はスナップショット・検証用。"""
        history: list[float] = []
        for epoch in range(1, epochs + 1):
            mean_loss = self.run_epoch(inputs, labels, epoch)
            history.append(mean_loss)
            logger.info("[%s] epoch %d/%d step=%d combined=%.6f", self.mode, epoch, epochs, self.step, mean_loss)
            if on_epoch_end is not None:
                on_epoch_end(epoch, self.step, mean_loss)
        return history
