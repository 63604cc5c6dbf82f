from __future__ import annotations

"""grad_check.py

中心差分による勾配検証ハーネス。判定はせず、最大相対誤差を返すだけ。
float64 での使用を前提とする。
"""

from typing import Callable, Mapping

import torch


def _relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    denom = torch.clamp(torch.maximum(analytic.abs(), numeric.abs()), min=1.0)
    return float(((analytic - numeric).abs() / denom).max()) if analytic.numel() else 0.0


def grad_check(f: Callable[[torch.Tensor], torch.Tensor], point: torch.Tensor, h: float = 1e-5) -> float:
    """f の point における解析勾配と中心差分の最大相対誤差を返す。

    誤差は |analytic − numeric| / max(1, |analytic|, |numeric|) の座標最大値。
    """
    x = point.detach().to(torch.float64).clone().requires_grad_(True)
    y = f(x)
    (analytic,) = torch.autograd.grad(y, x, allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(x)

    numeric = torch.zeros_like(x)
    flat = x.detach().clone().reshape(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + h
            f_plus = float(f(flat.view_as(x)))
            flat[i] = orig - h
            f_minus = float(f(flat.view_as(x)))
            flat[i] = orig
            numeric.view(-1)[i] = (f_plus - f_minus) / (2.0 * h)
    return _relative_error(analytic.detach(), numeric)


def grad_check_tensors(
    loss_fn: Callable[[], torch.Tensor],
    tensors: Mapping[str, torch.Tensor],
    h: float = 1e-5,
) -> dict[str, float]:
    """複数の葉テンソル (モデルパラメータ・摂動など) をまとめて検証する。

    loss_fn は引数を取らず、tensors を参照してスカラー損失を返すクロージャ。
    tensors は requires_grad の葉テンソルで、数値微分のため一時的にその場で書き換える。
    戻り値はテンソル名ごとの最大相対誤差。
    """
    names = list(tensors)
    leaves = [tensors[n] for n in names]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, leaves, allow_unused=True)

    errors: dict[str, float] = {}
    with torch.no_grad():
        for name, leaf, grad in zip(names, leaves, grads):
            analytic = torch.zeros_like(leaf) if grad is None else grad.detach()
            numeric = torch.zeros_like(leaf)
            flat = leaf.view(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + h
                f_plus = float(loss_fn())
                flat[i] = orig - h
                f_minus = float(loss_fn())
                flat[i] = orig
                numeric.view(-1)[i] = (f_plus - f_minus) / (2.0 * h)
            errors[name] = _relative_error(analytic, numeric)
    return errors
