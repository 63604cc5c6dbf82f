from __future__ import annotations

"""tcf.py

Transformer-based Cross-modal Fusion (TCF) モデル本体。

(Q, O, I) を BERT 形式の 1 系列に並べ、各列 = トークン埋め込み (画像列は領域の線形射影)
+ セグメント埋め込み + 位置埋め込み とし、post-LN の Transformer エンコーダを通して
[CLS] 列の出力 h_cls から全結合層で解答ロジットを出す。softmax は損失・推論側で掛ける。
"""

from dataclasses import dataclass

import torch
from torch import nn

from .. import diffcore as dc
from ..errors import ShapeMismatchError
from .config import ModelConfig
from .inputs import FusionBatch, FusionInput, RegionFeature, SpanMap, collate


@dataclass
class EncoderOutput:
    hidden: torch.Tensor  # (…, S, D) 行 = 系列位置
    h_cls: torch.Tensor  # (…, D)


# ------------------------------------------------------------
# エンコーダ層
# ------------------------------------------------------------


class EncoderLayer(nn.Module):
    """post-LN の Transformer エンコーダ 1 層 (多頭自己注意 + GELU FFN)。"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d, f = config.hidden_dim, config.intermediate_dim
        self.num_heads = config.num_heads
        self.eps = config.layer_norm_eps
        self.query_weight = nn.Parameter(torch.empty(d, d))
        self.query_bias = nn.Parameter(torch.empty(d))
        self.key_weight = nn.Parameter(torch.empty(d, d))
        self.key_bias = nn.Parameter(torch.empty(d))
        self.value_weight = nn.Parameter(torch.empty(d, d))
        self.value_bias = nn.Parameter(torch.empty(d))
        self.output_weight = nn.Parameter(torch.empty(d, d))
        self.output_bias = nn.Parameter(torch.empty(d))
        self.attn_norm_gamma = nn.Parameter(torch.empty(d))
        self.attn_norm_beta = nn.Parameter(torch.empty(d))
        self.ffn_in_weight = nn.Parameter(torch.empty(f, d))
        self.ffn_in_bias = nn.Parameter(torch.empty(f))
        self.ffn_out_weight = nn.Parameter(torch.empty(d, f))
        self.ffn_out_bias = nn.Parameter(torch.empty(d))
        self.ffn_norm_gamma = nn.Parameter(torch.empty(d))
        self.ffn_norm_beta = nn.Parameter(torch.empty(d))

    def _split_heads(self, x: torch.Tensor) -> torch.Tensor:
        *lead, s, d = x.shape
        return x.reshape(*lead, s, self.num_heads, d // self.num_heads).transpose(-3, -2)

    def _merge_heads(self, x: torch.Tensor) -> torch.Tensor:
        *lead, _, s, dh = x.shape
        return x.transpose(-3, -2).reshape(*lead, s, self.num_heads * dh)

    def self_attention(self, x: torch.Tensor, key_mask: torch.Tensor | None) -> torch.Tensor:
        q = self._split_heads(dc.linear(x, self.query_weight, self.query_bias))
        k = self._split_heads(dc.linear(x, self.key_weight, self.key_bias))
        v = self._split_heads(dc.linear(x, self.value_weight, self.value_bias))
        mask = None if key_mask is None else key_mask.unsqueeze(-2)  # (…, 1, S) : ヘッド軸へ伝播
        ctx = dc.attention(q, k, v, mask)
        return dc.linear(self._merge_heads(ctx), self.output_weight, self.output_bias)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor | None = None) -> torch.Tensor:
        h = dc.layer_norm(
            dc.add(x, self.self_attention(x, key_mask)), self.attn_norm_gamma, self.attn_norm_beta, self.eps
        )
        ff = dc.linear(dc.gelu(dc.linear(h, self.ffn_in_weight, self.ffn_in_bias)), self.ffn_out_weight, self.ffn_out_bias)
        return dc.layer_norm(dc.add(h, ff), self.ffn_norm_gamma, self.ffn_norm_beta, self.eps)


# ------------------------------------------------------------
# TCF モデル
# ------------------------------------------------------------


class TCFModel(nn.Module):
    """θ 一式を保持する TCF モデル。パラメータの宣言順がチェックポイントの格納順になる。"""

    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        v = config.embed_dim
        self.token_embeddings = nn.Parameter(torch.empty(config.vocab_size, v))
        self.segment_embeddings = nn.Parameter(torch.empty(2, v))
        self.position_embeddings = nn.Parameter(torch.empty(config.max_positions, v))
        self.region_weight = nn.Parameter(torch.empty(v, config.region_input_dim))
        self.region_bias = nn.Parameter(torch.empty(v))
        self.layers = nn.ModuleList([EncoderLayer(config) for _ in range(config.num_layers)])
        self.classifier_weight = nn.Parameter(torch.empty(config.answer_count, config.hidden_dim))
        self.classifier_bias = nn.Parameter(torch.empty(config.answer_count))
        self.reset_parameters(generator)

    # ----------------------------------------------------------
    # 初期化
    # ----------------------------------------------------------

    @torch.no_grad()
    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        """重み・埋め込み表は N(0, init_std)、バイアスと LN シフトは 0、LN スケールは 1。"""
        std = self.config.init_std
        for name, p in self.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if leaf.endswith("_gamma"):
                p.fill_(1.0)
            elif leaf.endswith("_bias") or leaf.endswith("_beta"):
                p.zero_()
            else:
                p.copy_(torch.randn(p.shape, generator=generator, dtype=p.dtype) * std)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    # ----------------------------------------------------------
    # 構成要素
    # ----------------------------------------------------------

    def project_regions(self, region_inputs: torch.Tensor) -> torch.Tensor:
        """(…, d_vis+6) → (…, V) の線形射影 W·x + b。"""
        if region_inputs.shape[-1] != self.config.region_input_dim:
            raise ShapeMismatchError(
                f"領域特徴の次元 {region_inputs.shape[-1]} ≠ d_vis+6 = {self.config.region_input_dim}"
            )
        return dc.linear(region_inputs, self.region_weight, self.region_bias)

    def embed(self, batch: FusionBatch) -> torch.Tensor:
        """BERT 形式の入力系列 (B, S, V) を組み立てる。"""
        s = batch.seq_len
        if s > self.config.max_positions:
            raise ShapeMismatchError(f"系列長 {s} が位置埋め込み表 {self.config.max_positions} を超えます")
        tokens = dc.embedding_lookup(self.token_embeddings, batch.token_ids)
        regions = self.project_regions(batch.region_inputs.to(self.region_weight.dtype))
        base = torch.where(batch.image_mask.unsqueeze(-1), regions, tokens)
        segments = dc.embedding_lookup(self.segment_embeddings, batch.segment_ids)
        positions = dc.embedding_lookup(self.position_embeddings, torch.arange(s))
        return base + segments + positions

    def encode(self, seq: torch.Tensor, key_mask: torch.Tensor | None = None) -> EncoderOutput:
        h = seq
        for layer in self.layers:
            h = layer(h, key_mask)
        return EncoderOutput(hidden=h, h_cls=h[..., 0, :])

    def classify(self, h_cls: torch.Tensor) -> torch.Tensor:
        if h_cls.shape[-1] != self.config.hidden_dim:
            raise ShapeMismatchError(f"h_cls の長さ {h_cls.shape[-1]} ≠ D {self.config.hidden_dim}")
        return dc.linear(h_cls, self.classifier_weight, self.classifier_bias)

    def perturb(self, seq: torch.Tensor, batch: FusionBatch, delta: torch.Tensor | None) -> torch.Tensor:
        """テキスト区間の列にだけ delta を加える。画像列とパディング列は触らない。"""
        if delta is None:
            return seq
        if delta.shape != seq.shape:
            raise ShapeMismatchError(f"delta の形状 {tuple(delta.shape)} ≠ 系列 {tuple(seq.shape)}")
        return torch.where(batch.text_mask.unsqueeze(-1), seq + delta, seq)

    def forward(self, batch: FusionBatch, delta: torch.Tensor | None = None) -> torch.Tensor:
        """(B, C) の解答ロジット。delta は (B, S, V) でテキスト区間外は無視される。"""
        seq = self.perturb(self.embed(batch), batch, delta)
        out = self.encode(seq, batch.valid_mask)
        return self.classify(out.h_cls)


# ------------------------------------------------------------
# 1 例単位の操作 (バッチサイズ 1 の特殊形)
# ------------------------------------------------------------


def project_region(r: RegionFeature, model: TCFModel) -> torch.Tensor:
    """1 領域の 2054 次元 (既定構成では d_vis+6) ベクトルを V 次元へ射影する。"""
    if r.stats.shape[0] != model.config.d_vis:
        raise ShapeMismatchError(f"領域統計量の次元 {r.stats.shape[0]} ≠ d_vis {model.config.d_vis}")
    x = torch.from_numpy(r.vector()).to(model.region_weight.dtype)
    return model.project_regions(x)


def assemble_sequence(x: FusionInput, model: TCFModel) -> tuple[torch.Tensor, SpanMap]:
    """(3+|Q|+|O|+|I|, V) の入力系列と区間マップを返す。"""
    batch = collate([x], model.config, dtype=model.region_weight.dtype)
    return model.embed(batch)[0], batch.spans[0]


def encode(seq: torch.Tensor, model: TCFModel) -> EncoderOutput:
    """パディングなし 1 系列 (N, V) をエンコードする。"""
    out = model.encode(seq.unsqueeze(0))
    return EncoderOutput(hidden=out.hidden[0], h_cls=out.h_cls[0])


def classify(h_cls: torch.Tensor, model: TCFModel) -> torch.Tensor:
    return model.classify(h_cls)


def forward(x: FusionInput, model: TCFModel, delta: torch.Tensor | None = None) -> torch.Tensor:
    """1 例の解答ロジット。delta はテキスト区間と同じ (3+|Q|+|O|, V) 形状。"""
    batch = collate([x], model.config, dtype=model.region_weight.dtype)
    padded = None
    if delta is not None:
        text_len = batch.spans[0].text_len
        if delta.shape != (text_len, model.config.embed_dim):
            raise ShapeMismatchError(
                f"delta の形状 {tuple(delta.shape)} ≠ テキスト区間 ({text_len}, {model.config.embed_dim})"
            )
        padded = torch.cat([delta, delta.new_zeros(batch.seq_len - text_len, delta.shape[1])]).unsqueeze(0)
    return model(batch, padded)[0]
