from __future__ import annotations

"""config.py

TCF モデルの構成。V (埋め込み幅) と D (エンコーダ隠れ幅) は同一値に固定する。
"""

from pydantic import BaseModel, Field, model_validator

# 領域の位置エンコーディング次元 (正規化ボックス 6 値)
BOX_DIM = 6
# [CLS], [SEP], [SEP]
NUM_SPECIAL = 3


class ModelConfig(BaseModel):  # pylint: disable=too-few-public-methods
    embed_dim: int = Field(64, ge=1, description="トークン/領域埋め込み幅 V")
    hidden_dim: int = Field(64, ge=1, description="エンコーダ隠れ幅 D")
    num_layers: int = Field(2, ge=0, description="エンコーダ層数 L")
    num_heads: int = Field(4, ge=1, description="注意ヘッド数 A")
    d_vis: int = Field(32, ge=1, description="領域ごとの視覚統計量の次元")
    answer_count: int = Field(14, ge=1, description="解答クラス数 (既定の合成タスクでは 14)")
    vocab_size: int = Field(37, ge=4, description="トークン語彙サイズ ([CLS]/[SEP]/[PAD] を含む)")
    max_question_len: int = Field(12, ge=1)
    max_tag_len: int = Field(5, ge=1)
    max_region_len: int = Field(5, ge=1)
    ffn_dim: int | None = Field(None, ge=1, description="FFN 中間幅 (未指定なら 4·D)")
    layer_norm_eps: float = Field(1e-12, gt=0)
    init_std: float = Field(0.02, gt=0)

    model_config = {"frozen": True, "extra": "forbid"}

    @model_validator(mode="after")
    def _check_dims(self) -> "ModelConfig":
        if self.embed_dim != self.hidden_dim:
            raise ValueError(f"V ({self.embed_dim}) と D ({self.hidden_dim}) は一致させてください")
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(f"D ({self.hidden_dim}) はヘッド数 A ({self.num_heads}) で割り切れる必要があります")
        return self

    @property
    def intermediate_dim(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.hidden_dim

    @property
    def region_input_dim(self) -> int:
        return self.d_vis + BOX_DIM

    @property
    def max_positions(self) -> int:
        return NUM_SPECIAL + self.max_question_len + self.max_tag_len + self.max_region_len

    @property
    def max_text_len(self) -> int:
        return NUM_SPECIAL + self.max_question_len + self.max_tag_len


def tiny_config(**overrides) -> ModelConfig:
    """勾配検証用の極小構成 (D=8, L=1, A=2)。"""
    base = dict(
        embed_dim=8,
        hidden_dim=8,
        num_layers=1,
        num_heads=2,
        d_vis=4,
        answer_count=5,
        vocab_size=12,
        max_question_len=4,
        max_tag_len=3,
        max_region_len=3,
    )
    base.update(overrides)
    return ModelConfig(**base)
