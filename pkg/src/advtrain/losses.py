from __future__ import annotations

"""losses.py

L_con (clean CE)、R_CE (摂動入力の CE)、R_JSD (clean/摂動の予測分布間の JSD) と
その組み合わせ。バッチ損失は例ごとの値の算術平均。
"""

import math
from dataclasses import dataclass
from typing import Any

import torch

from .. import diffcore as dc
from ..errors import InvalidDistributionError, ShapeMismatchError
from ..model import FusionBatch, TCFModel
from .config import AdvConfig

_LN2 = math.log(2.0)


# ------------------------------------------------------------
# Jensen–Shannon divergence
# ------------------------------------------------------------


def jsd(p: torch.Tensor, q: torch.Tensor, tol: float = 1e-6) -> torch.Tensor:
    """確率分布 p, q の JSD (自然対数)。0·log(0/x) は 0 とみなす。"""
    p = torch.as_tensor(p, dtype=torch.get_default_dtype())
    q = torch.as_tensor(q, dtype=torch.get_default_dtype())
    if p.shape != q.shape:
        raise InvalidDistributionError(f"長さが一致しません: {tuple(p.shape)} vs {tuple(q.shape)}")
    for name, d in (("p", p), ("q", q)):
        dc.assert_finite(d, name)
        if bool((d < 0).any()):
            raise InvalidDistributionError(f"{name} に負の成分があります")
        total = d.sum(dim=-1)
        if bool(((total - 1.0).abs() > tol).any()):
            raise InvalidDistributionError(f"{name} の総和が 1 ではありません: {total.tolist()}")
    m = 0.5 * (p + q)
    kl_pm = (torch.special.xlogy(p, p) - torch.special.xlogy(p, m)).sum(dim=-1)
    kl_qm = (torch.special.xlogy(q, q) - torch.special.xlogy(q, m)).sum(dim=-1)
    return (0.5 * kl_pm + 0.5 * kl_qm).clamp(min=0.0, max=_LN2)


def jsd_from_logits(logits_p: torch.Tensor, logits_q: torch.Tensor) -> torch.Tensor:
    """softmax(logits_p) と softmax(logits_q) の JSD を例ごとに返す。

    log 空間で計算するので、確率がアンダーフローしても勾配が NaN にならない。
    """
    logp = dc.log_softmax(logits_p)
    logq = dc.log_softmax(logits_q)
    logm = torch.logaddexp(logp, logq) - _LN2
    p, q = logp.exp(), logq.exp()
    kl_pm = (p * (logp - logm)).sum(dim=-1)
    kl_qm = (q * (logq - logm)).sum(dim=-1)
    return (0.5 * kl_pm + 0.5 * kl_qm).clamp(min=0.0)


# ------------------------------------------------------------
# 損失の内訳
# ------------------------------------------------------------


@dataclass
class LossBreakdown:
    """1 バッチ分の損失。敵対的モードでは全項、vanilla では l_con と combined のみ。"""

    l_con: torch.Tensor
    r_ce: torch.Tensor | None
    r_jsd: torch.Tensor | None
    combined: torch.Tensor

    def to_record(self) -> dict[str, Any]:
        def _f(t: torch.Tensor | None) -> float | None:
            return None if t is None else float(t.detach())

        return {
            "l_con": _f(self.l_con),
            "r_ce": _f(self.r_ce),
            "r_jsd": _f(self.r_jsd),
            "combined": _f(self.combined),
        }


def _check_labels(batch: FusionBatch, labels: torch.Tensor) -> torch.Tensor:
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.shape != (batch.size,):
        raise ShapeMismatchError(f"ラベル数 {tuple(labels.shape)} ≠ バッチサイズ {batch.size}")
    return labels


def vanilla_loss(model: TCFModel, batch: FusionBatch, labels: torch.Tensor) -> LossBreakdown:
    """従来の目的関数 L_con のみ。"""
    labels = _check_labels(batch, labels)
    l_con = dc.cross_entropy(model(batch), labels).mean()
    return LossBreakdown(l_con=l_con, r_ce=None, r_jsd=None, combined=l_con)


def per_example_objective(
    model: TCFModel,
    batch: FusionBatch,
    labels: torch.Tensor,
    delta: torch.Tensor,
    alpha: float,
    clean_logits: torch.Tensor,
) -> torch.Tensor:
    """内側最大化の目的 R_CE + α·R_JSD を例ごとに返す (L_con は δ に依存しないので含めない)。"""
    adv_logits = model(batch, delta)
    obj = dc.cross_entropy(adv_logits, labels)
    if alpha:
        obj = obj + alpha * jsd_from_logits(adv_logits, clean_logits)
    return obj


def losses(
    model: TCFModel,
    batch: FusionBatch,
    labels: torch.Tensor,
    delta: torch.Tensor,
    cfg: AdvConfig,
) -> LossBreakdown:
    """clean / 摂動の 2 回の順伝播から L_con, R_CE, R_JSD と combined を計算する。

    R_JSD は両分岐に勾配を流す (clean 側も stop-gradient しない)。
    """
    labels = _check_labels(batch, labels)
    clean_logits = model(batch)
    adv_logits = model(batch, delta)
    l_con = dc.cross_entropy(clean_logits, labels).mean()
    r_ce = dc.cross_entropy(adv_logits, labels).mean()
    r_jsd = jsd_from_logits(adv_logits, clean_logits).mean()
    combined = l_con + r_ce + cfg.alpha * r_jsd
    return LossBreakdown(l_con=l_con, r_ce=r_ce, r_jsd=r_jsd, combined=combined)
