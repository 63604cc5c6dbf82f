from __future__ import annotations

"""ops.py

モデルが使う微分可能プリミティブ群。テンソル本体と逆伝播のトレースは torch の
autograd に任せ、ここでは入力検証とブロードキャストの制限だけを担う。

系列は「行 = 系列位置、列 = 特徴次元」の (…, S, V) 配置で扱う。
ブロードキャストは (行列 × ベクトル) と行ベクトルのバイアス加算のみ。
"""

import math
from typing import Sequence

import torch
import torch.nn.functional as F

from ..errors import LabelRangeError, NonFiniteError, ShapeMismatchError


# ------------------------------------------------------------
# 検証ヘルパ
# ------------------------------------------------------------


def assert_finite(t: torch.Tensor, name: str = "tensor") -> torch.Tensor:
    """非有限値があれば最初の位置を添えて NonFiniteError を送出する。"""
    finite = torch.isfinite(t)
    if not bool(finite.all()):
        bad = torch.nonzero(~finite, as_tuple=False)[0]
        index = tuple(int(i) for i in bad)
        raise NonFiniteError(name, index, float(t.detach()[index]))
    return t


def _check_labels(labels: torch.Tensor, num_classes: int) -> None:
    if labels.numel() == 0:
        return
    lo, hi = int(labels.min()), int(labels.max())
    if lo < 0 or hi >= num_classes:
        raise LabelRangeError(f"ラベル {lo if lo < 0 else hi} がクラス数 {num_classes} の範囲外です")


# ------------------------------------------------------------
# 分布・損失
# ------------------------------------------------------------


def softmax(logits: torch.Tensor) -> torch.Tensor:
    """最終軸に沿った softmax。"""
    assert_finite(logits, "logits")
    return torch.softmax(logits, dim=-1)


def log_softmax(logits: torch.Tensor) -> torch.Tensor:
    assert_finite(logits, "logits")
    return torch.log_softmax(logits, dim=-1)


def cross_entropy(logits: torch.Tensor, label: int | torch.Tensor) -> torch.Tensor:
    """-log softmax(logits)[label]。

    logits が 1 階ならスカラー、(B, C) なら例ごとの値 (B,) を返す。平均は呼び出し側で取る。
    """
    num_classes = logits.shape[-1]
    labels = torch.as_tensor(label, dtype=torch.long)
    _check_labels(labels, num_classes)
    logp = log_softmax(logits)
    if logits.dim() == 1:
        if labels.dim() != 0:
            raise ShapeMismatchError("1 階の logits にはスカラーのラベルが必要です")
        return -logp[labels]
    if labels.shape != logits.shape[:-1]:
        raise ShapeMismatchError(f"labels {tuple(labels.shape)} と logits {tuple(logits.shape)} が対応しません")
    return -logp.gather(-1, labels.unsqueeze(-1)).squeeze(-1)


# ------------------------------------------------------------
# 線形代数
# ------------------------------------------------------------


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeMismatchError(f"matmul: {tuple(a.shape)} × {tuple(b.shape)}")
    return a @ b


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """要素ごとの加算。b は a と同形か、最終軸長のベクトル (行ベクトルバイアス)。"""
    if a.shape != b.shape and not (b.dim() == 1 and b.shape[0] == a.shape[-1]):
        raise ShapeMismatchError(f"add: {tuple(a.shape)} + {tuple(b.shape)}")
    return a + b


def scale(a: torch.Tensor, c: float) -> torch.Tensor:
    return a * c


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """x · Wᵀ + b。weight は (out, in)。"""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeMismatchError(f"linear: 入力幅 {x.shape[-1]} ≠ 重み入力幅 {weight.shape[1]}")
    out = x @ weight.transpose(0, 1)
    return out if bias is None else add(out, bias)


def embedding_lookup(table: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
    """埋め込み表から行を引く。範囲外 ID は拒否する。"""
    ids = torch.as_tensor(ids, dtype=torch.long)
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise ShapeMismatchError(f"語彙外のトークン ID です (語彙サイズ {table.shape[0]})")
    return F.embedding(ids, table)


# ------------------------------------------------------------
# 非線形・正規化
# ------------------------------------------------------------


def layer_norm(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return F.layer_norm(x, (x.shape[-1],), gamma, beta, eps)


def gelu(x: torch.Tensor) -> torch.Tensor:
    """erf 形式の GELU。"""
    return F.gelu(x)


def attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    key_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """scaled dot-product attention。

    q, k, v は (…, S, d)。key_mask は (…, S) の bool で True が有効なキー。
    各クエリ行には少なくとも 1 つ有効なキーがあること ([CLS] が常に有効)。
    """
    d = q.shape[-1]
    scores = (q @ k.transpose(-2, -1)) / math.sqrt(d)
    if key_mask is not None:
        mask = key_mask.unsqueeze(-2)
        scores = scores.masked_fill(~mask, torch.finfo(scores.dtype).min)
    weights = torch.softmax(scores, dim=-1)
    return weights @ v


# ------------------------------------------------------------
# 系列軸の結合・切り出し
# ------------------------------------------------------------


def concat(parts: Sequence[torch.Tensor]) -> torch.Tensor:
    """系列軸 (-2) に沿って連結する。"""
    widths = {p.shape[-1] for p in parts}
    if len(widths) != 1:
        raise ShapeMismatchError(f"concat: 特徴幅が揃っていません {sorted(widths)}")
    return torch.cat(list(parts), dim=-2)


def slice_columns(x: torch.Tensor, start: int, stop: int) -> torch.Tensor:
    """系列軸 (-2) の [start, stop) を取り出す。"""
    if not 0 <= start <= stop <= x.shape[-2]:
        raise ShapeMismatchError(f"slice: [{start}, {stop}) は系列長 {x.shape[-2]} を超えます")
    return x[..., start:stop, :]
