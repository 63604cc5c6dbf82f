from __future__ import annotations

"""inner_max.py

内側最大化 max_δ R_CE + α·R_JSD。

δ_0 ~ U(−init_scale, init_scale) をテキスト区間にだけ置き、K 回
δ_k = Π_ε(δ_{k−1} + η_δ · g/‖g‖_F) で更新する (Π_ε は列ごとの L2 ε 球への射影)。
θ は凍結し、例ごとに独立の δ を持つ。目的関数が下がる例は歩幅を半減して
max_backtracks 回まで再試行し、それでも上がらなければその例は据え置く
(勾配ノルム 0 の例も据え置き)。
"""

from dataclasses import dataclass
from typing import Callable

import torch

from ..model import FusionBatch, FusionInput, TCFModel, collate
from .config import AdvConfig
from .losses import per_example_objective

LogitsFn = Callable[[FusionBatch, "torch.Tensor | None"], torch.Tensor]


@dataclass
class Perturbation:
    """バッチ分の δ。delta は (B, S, V) でテキスト区間外は 0。"""

    delta: torch.Tensor
    text_lengths: list[int]

    def for_example(self, i: int) -> torch.Tensor:
        """i 番目の例の (3+|Q|+|O|, V) 行列。"""
        return self.delta[i, : self.text_lengths[i]]

    def column_norms(self) -> torch.Tensor:
        return self.delta.norm(dim=-1)


# ------------------------------------------------------------
# 射影・正規化
# ------------------------------------------------------------


def project_columns(delta: torch.Tensor, epsilon: float) -> torch.Tensor:
    """各列 (系列位置のベクトル) のノルムが ε を超えたら ε に縮める。"""
    norms = delta.norm(dim=-1, keepdim=True)
    return delta * (epsilon / norms.clamp(min=epsilon))


def _normalize_per_example(grad: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    norms = grad.flatten(1).norm(dim=1)
    safe = torch.where(norms > 0, norms, torch.ones_like(norms))
    return grad / safe.view(-1, 1, 1), norms


@dataclass
class _Evaluation:
    objective: torch.Tensor  # (B,)
    grad: torch.Tensor  # (B, S, V)


class _Objective:
    def __init__(self, model: LogitsFn, batch: FusionBatch, labels: torch.Tensor, alpha: float):
        self.model = model
        self.batch = batch
        self.labels = labels
        self.alpha = alpha
        with torch.no_grad():
            self.clean_logits = model(batch)

    def __call__(self, delta: torch.Tensor) -> _Evaluation:
        d = delta.detach().requires_grad_(True)
        with torch.enable_grad():
            obj = per_example_objective(self.model, self.batch, self.labels, d, self.alpha, self.clean_logits)
            (grad,) = torch.autograd.grad(obj.sum(), d)
        return _Evaluation(objective=obj.detach(), grad=grad.detach())


# ------------------------------------------------------------
# Public API
# ------------------------------------------------------------


def inner_maximize(
    model: TCFModel | LogitsFn,
    batch: FusionBatch,
    labels: torch.Tensor,
    cfg: AdvConfig,
    generator: torch.Generator | None = None,
    *,
    alpha: float | None = None,
) -> Perturbation:
    """凍結したモデルに対して δ を K ステップ上昇させて返す。

    alpha を与えると cfg.alpha を上書きする (攻撃評価では 0 = R_CE のみ)。
    """
    labels = torch.as_tensor(labels, dtype=torch.long)
    alpha = cfg.alpha if alpha is None else alpha
    params = list(model.parameters()) if isinstance(model, torch.nn.Module) else []
    prev_requires = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)

    try:
        dtype = params[0].dtype if params else torch.get_default_dtype()
        b, s = batch.token_ids.shape
        v = _embed_width(model)
        mask = batch.text_mask.unsqueeze(-1).to(dtype)
        noise = torch.rand((b, s, v), generator=generator, dtype=dtype) * 2.0 - 1.0
        delta = project_columns(noise * cfg.init_scale * mask, cfg.epsilon)

        objective = _Objective(model, batch, labels, alpha)
        current = objective(delta)
        for _ in range(cfg.ascent_steps):
            direction, norms = _normalize_per_example(current.grad)
            pending = norms > 0
            step = torch.full((b,), cfg.ascent_lr, dtype=dtype)
            new_delta, new_obj, new_grad = delta.clone(), current.objective.clone(), current.grad.clone()
            for _attempt in range(cfg.max_backtracks + 1):
                if not bool(pending.any()):
                    break
                candidate = project_columns(delta + step.view(-1, 1, 1) * direction, cfg.epsilon)
                trial = objective(candidate)
                ok = pending & (trial.objective >= current.objective)
                new_delta[ok] = candidate[ok]
                new_obj[ok] = trial.objective[ok]
                new_grad[ok] = trial.grad[ok]
                pending &= ~ok
                step = step * 0.5
            delta = new_delta
            current = _Evaluation(objective=new_obj, grad=new_grad)
    finally:
        for p, flag in zip(params, prev_requires):
            p.requires_grad_(flag)

    return Perturbation(delta=delta.detach(), text_lengths=[sp.text_len for sp in batch.spans])


def inner_maximize_example(
    x: FusionInput,
    y: int,
    model: TCFModel,
    cfg: AdvConfig,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """1 例版。(3+|Q|+|O|, V) の δ_K を返す。"""
    batch = collate([x], model.config, dtype=next(model.parameters()).dtype)
    pert = inner_maximize(model, batch, torch.tensor([y]), cfg, generator)
    return pert.for_example(0)


def _embed_width(model: TCFModel | LogitsFn) -> int:
    config = getattr(model, "config", None)
    if config is not None:
        return int(config.embed_dim)
    return int(getattr(model, "embed_dim"))
